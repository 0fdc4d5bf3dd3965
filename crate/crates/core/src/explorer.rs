//! Sampling strategies, optimizer restarts from every draw, and clustering of
//! the optima that come out.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, TwinDataset};
use crate::objective::Objective;
use crate::optim::{minimize, minimize_objective, Minimum, OptimConfig, OptimResult, Termination};
use crate::params::{natural_len, natural_names, to_natural, BoxBounds, FixedMask, NaturalParams, UnconstrainedParams};
use crate::sampler::{sample, Chain, ChainTable, SamplerConfig};

/// Natural-scale tolerance for treating two optima as the same.
pub const CLUSTER_PARAM_TOL: f64 = 1e-4;
/// NLL tolerance for treating two optima as the same.
pub const CLUSTER_NLL_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Base,
    SeedLoop { n_seeds: usize },
    FixedSubset { mask: FixedMask },
    Bounded { bounds: BoxBounds },
}

impl Strategy {
    pub const DEFAULT_SEEDS: usize = 15;

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Base => "base",
            Strategy::SeedLoop { .. } => "seedloop",
            Strategy::FixedSubset { .. } => "fixed",
            Strategy::Bounded { .. } => "bounded",
        }
    }

    /// Sampler configuration for one chain of this strategy.
    fn config_for(&self, cfg: &SamplerConfig) -> SamplerConfig {
        let mut c = cfg.clone();
        match self {
            Strategy::Base | Strategy::SeedLoop { .. } => {
                c.mask = None;
                c.bounds = None;
            }
            Strategy::FixedSubset { mask } => {
                c.mask = Some(mask.clone());
                c.bounds = None;
            }
            Strategy::Bounded { bounds } => {
                c.mask = None;
                c.bounds = Some(bounds.clone());
            }
        }
        c
    }
}

/// Outcome of one seed in a seed loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    pub min_nll: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyOutcome {
    pub chain: Chain,
    /// One entry per chain run, in seed order.
    pub seeds: Vec<SeedOutcome>,
}

/// Runs a strategy and returns its chain (the best one under a seed loop).
pub fn run_strategy(
    s: &Strategy,
    start: &UnconstrainedParams,
    data: &TwinDataset,
    spec: &ModelSpec,
    cfg: &SamplerConfig,
) -> Result<Chain> {
    run_strategy_detailed(s, start, data, spec, cfg).map(|o| o.chain)
}

/// As [`run_strategy`], also reporting every seed of a seed loop.
///
/// Seeds whose chain fails are skipped; the loop only fails when all do.
pub fn run_strategy_detailed(
    s: &Strategy,
    start: &UnconstrainedParams,
    data: &TwinDataset,
    spec: &ModelSpec,
    cfg: &SamplerConfig,
) -> Result<StrategyOutcome> {
    let context = |e: Error| e.with_context(format!("strategy {}", s.name()));
    let base = s.config_for(cfg);
    match s {
        Strategy::SeedLoop { n_seeds } => {
            if *n_seeds == 0 {
                return Err(Error::domain("seed loop needs at least one seed"));
            }
            let runs: Vec<(u64, Result<Chain>)> = (0..*n_seeds as u64)
                .into_par_iter()
                .map(|i| {
                    let seed = base.seed.wrapping_add(i);
                    let c = SamplerConfig { seed, ..base.clone() };
                    (seed, sample(start, data, spec, &c))
                })
                .collect();
            let seeds = runs
                .iter()
                .map(|(seed, r)| SeedOutcome {
                    seed: *seed,
                    min_nll: r.as_ref().ok().map(Chain::min_nll),
                    error: r.as_ref().err().map(|e| e.to_string()),
                })
                .collect();
            let mut best: Option<Chain> = None;
            let mut first_err = None;
            for (_, r) in runs {
                match r {
                    Ok(c) => {
                        if best.as_ref().is_none_or(|b| c.min_nll() < b.min_nll()) {
                            best = Some(c);
                        }
                    }
                    Err(e) => {
                        first_err.get_or_insert(e);
                    }
                }
            }
            match best {
                Some(chain) => Ok(StrategyOutcome { chain, seeds }),
                None => Err(context(first_err.expect("at least one seed ran"))),
            }
        }
        _ => {
            let chain = sample(start, data, spec, &base).map_err(context)?;
            let seeds = vec![SeedOutcome {
                seed: base.seed,
                min_nll: Some(chain.min_nll()),
                error: None,
            }];
            Ok(StrategyOutcome { chain, seeds })
        }
    }
}

/// One optimizer run started from a draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Restart {
    pub start_index: usize,
    pub result: OptimResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumCluster {
    pub representative: NaturalParams,
    pub nll: f64,
    pub count: usize,
    /// Start indices of the member restarts.
    pub members: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationReport {
    pub per_restart: Vec<Restart>,
    pub best: Option<Restart>,
    pub optima_clusters: Vec<OptimumCluster>,
    pub min_nll_by_strategy: Option<f64>,
    pub n_converged: usize,
    pub n_failed: usize,
}

/// Groups points into connected components of the relation "every
/// coordinate within `x_tol` and value within `f_tol`". Each group lists
/// member indices in input order; groups are sorted by their lowest value.
pub fn cluster_optima(points: &[(Vec<f64>, f64)], x_tol: f64, f_tol: f64) -> Vec<Vec<usize>> {
    let n = points.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            let (xi, fi) = &points[i];
            let (xj, fj) = &points[j];
            let close = (fi - fj).abs() < f_tol
                && xi.iter().zip(xj).all(|(a, b)| (a - b).abs() < x_tol);
            if close {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; n];
    for i in 0..n {
        let r = find(&mut parent, i);
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    let best = |g: &Vec<usize>| {
        g.iter()
            .map(|&i| points[i].1)
            .fold(f64::INFINITY, f64::min)
    };
    groups.sort_by(|a, b| best(a).total_cmp(&best(b)).then(a[0].cmp(&b[0])));
    groups
}

/// Lowest value in a group, ties to the earliest member.
fn group_best(points: &[(Vec<f64>, f64)], group: &[usize]) -> usize {
    *group
        .iter()
        .min_by(|&&a, &&b| points[a].1.total_cmp(&points[b].1).then(a.cmp(&b)))
        .expect("nonempty group")
}

/// Restarts the optimizer from every draw of `chain` (all parameters free).
pub fn restart_all(
    chain: &Chain,
    data: &TwinDataset,
    spec: &ModelSpec,
    optim_cfg: &OptimConfig,
) -> Result<ExplorationReport> {
    if chain.is_empty() {
        return Err(Error::domain("cannot restart from an empty chain"));
    }
    if chain.n_components != spec.n_components {
        return Err(Error::LengthMismatch {
            expected: spec.dim(),
            got: chain.draws[0].len(),
        });
    }
    optim_cfg.validate()?;
    let per_restart: Vec<Restart> = (0..chain.len())
        .into_par_iter()
        .map(|i| {
            let result = chain
                .draw(i)
                .and_then(|start| minimize(&start, data, spec, optim_cfg, None))
                .unwrap_or_else(|_| failed_result(&chain.draws[i]));
            Restart {
                start_index: i,
                result,
            }
        })
        .collect();
    Ok(assemble_report(per_restart))
}

fn failed_result(start: &[f64]) -> OptimResult {
    OptimResult {
        argmin: UnconstrainedParams::from_flat(start).expect("draw length"),
        nll: f64::INFINITY,
        converged: false,
        iterations: 0,
        termination: Termination::InvalidStart,
    }
}

fn assemble_report(per_restart: Vec<Restart>) -> ExplorationReport {
    let converged: Vec<&Restart> = per_restart.iter().filter(|r| r.result.converged).collect();
    let points: Vec<(Vec<f64>, f64)> = converged
        .iter()
        .map(|r| (to_natural(&r.result.argmin).to_flat(), r.result.nll))
        .collect();
    let optima_clusters = cluster_optima(&points, CLUSTER_PARAM_TOL, CLUSTER_NLL_TOL)
        .into_iter()
        .map(|g| {
            let rep = group_best(&points, &g);
            OptimumCluster {
                representative: to_natural(&converged[rep].result.argmin),
                nll: points[rep].1,
                count: g.len(),
                members: g.iter().map(|&i| converged[i].start_index).collect(),
            }
        })
        .collect();
    let best = converged
        .iter()
        .min_by(|a, b| {
            a.result
                .nll
                .total_cmp(&b.result.nll)
                .then(a.start_index.cmp(&b.start_index))
        })
        .map(|r| (*r).clone());
    let n_converged = converged.len();
    ExplorationReport {
        min_nll_by_strategy: best.as_ref().map(|b| b.result.nll),
        best,
        optima_clusters,
        n_failed: per_restart.len() - n_converged,
        n_converged,
        per_restart,
    }
}

impl ExplorationReport {
    /// Header of the per-restart CSV.
    pub fn restarts_header(n_components: usize) -> Vec<String> {
        let mut h: Vec<String> = ["start_index", "converged", "termination", "nll"]
            .map(String::from)
            .to_vec();
        let mut names = natural_names(n_components);
        names.pop();
        h.extend(names);
        h
    }

    pub fn write_restarts_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let m = self
            .per_restart
            .first()
            .map_or(3, |r| r.result.argmin.n_components());
        w.write_record(Self::restarts_header(m))?;
        let k = natural_len(m) - 1;
        for r in &self.per_restart {
            let nat = to_natural(&r.result.argmin).to_flat();
            let mut rec = vec![
                r.start_index.to_string(),
                r.result.converged.to_string(),
                r.result.termination.as_str().to_string(),
                if r.result.nll.is_finite() {
                    r.result.nll.to_string()
                } else {
                    "inf".to_string()
                },
            ];
            rec.extend(nat[..k].iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Clustered minima of a generic objective, for synthetic landscapes.
#[derive(Debug, Clone, PartialEq)]
pub struct GenericExploration {
    pub minima: Vec<Minimum>,
    /// Member indices into `minima` (converged only), best cluster first.
    pub clusters: Vec<Vec<usize>>,
}

impl GenericExploration {
    /// Converged minimum with the lowest value.
    pub fn global(&self) -> Option<&Minimum> {
        self.clusters
            .first()
            .and_then(|g| g.iter().map(|&i| &self.minima[i]).min_by(|a, b| a.value.total_cmp(&b.value)))
    }
}

/// Minimizes `obj` from every start and clusters the converged minima.
pub fn explore_objective<O: Objective + ?Sized>(
    obj: &O,
    starts: &[Vec<f64>],
    bounds: &BoxBounds,
    cfg: &OptimConfig,
    x_tol: f64,
    f_tol: f64,
) -> Result<GenericExploration> {
    let minima = starts
        .par_iter()
        .map(|s| minimize_objective(obj, s, bounds, cfg))
        .collect::<Result<Vec<_>>>()?;
    let idx: Vec<usize> = (0..minima.len()).filter(|&i| minima[i].converged()).collect();
    let points: Vec<(Vec<f64>, f64)> = idx.iter().map(|&i| (minima[i].x.clone(), minima[i].value)).collect();
    let clusters = cluster_optima(&points, x_tol, f_tol)
        .into_iter()
        .map(|g| g.into_iter().map(|j| idx[j]).collect())
        .collect();
    Ok(GenericExploration { minima, clusters })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CollapseThresholds {
    pub weight_eps: f64,
    pub mean_gap_eps: f64,
}

impl Default for CollapseThresholds {
    fn default() -> Self {
        CollapseThresholds {
            weight_eps: 1e-3,
            mean_gap_eps: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseSummary {
    /// Distinct components with non-negligible median weight.
    pub n_effective_components: usize,
    /// Adjacent components (1-based labels) whose median mean gap is negligible.
    pub collapsed_pairs: Vec<(usize, usize)>,
    /// Components (1-based) whose median weight is negligible.
    pub empty_components: Vec<usize>,
    /// Average over draws of the per-draw effective component count.
    pub mean_effective_per_draw: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Counts distinct live components from weights and ordered means.
fn effective_count(weights: &[f64], means: &[f64], t: &CollapseThresholds) -> usize {
    let mut count = 0;
    let mut last_mean: Option<f64> = None;
    for k in 0..weights.len() {
        if weights[k] <= t.weight_eps {
            continue;
        }
        match last_mean {
            Some(prev) if means[k] - prev <= t.mean_gap_eps => {}
            _ => count += 1,
        }
        last_mean = Some(means[k]);
    }
    count
}

/// Reports components that are effectively absent (negligible weight) or
/// merged with a neighbour (negligible mean gap).
pub fn detect_collapse(chain: &ChainTable, t: &CollapseThresholds) -> Result<CollapseSummary> {
    if chain.is_empty() {
        return Err(Error::domain("cannot assess collapse on an empty chain"));
    }
    let m = chain.n_components;
    let p0 = 4 * m + 1;
    let median_w: Vec<f64> = (0..m).map(|k| median(chain.column(p0 + k))).collect();
    let median_gap: Vec<f64> = (1..m)
        .map(|k| median(chain.natural.iter().map(|r| r[k] - r[k - 1]).collect()))
        .collect();
    // medians of the means rebuilt from the median gaps keep the ordering
    let mut means = vec![median(chain.column(0))];
    for g in &median_gap {
        means.push(means.last().unwrap() + g);
    }
    let per_draw: f64 = chain
        .natural
        .iter()
        .map(|r| effective_count(&r[p0..p0 + m], &r[..m], t) as f64)
        .sum::<f64>()
        / chain.len() as f64;
    Ok(CollapseSummary {
        n_effective_components: effective_count(&median_w, &means, t),
        collapsed_pairs: (1..m)
            .filter(|&k| median_gap[k - 1] <= t.mean_gap_eps)
            .map(|k| (k, k + 1))
            .collect(),
        empty_components: (0..m).filter(|&k| median_w[k] <= t.weight_eps).map(|k| k + 1).collect(),
        mean_effective_per_draw: per_draw,
    })
}
