//! NUTS sampling of the twin-model likelihood and the chain table format.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, TwinDataset, TwinModel};
use crate::nuts::{run_nuts, NutsSettings, Trace};
use crate::objective::{BoxTransformed, Masked, Objective};
use crate::params::{
    bound_inverse, bound_transform, natural_len, natural_names, to_natural, BoxBounds, FixedMask,
    UnconstrainedParams,
};

/// Share of divergent post-warmup transitions above which a chain is rejected.
pub const STUCK_FRACTION: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub n_iterations: usize,
    pub n_warmup: usize,
    pub target_accept: f64,
    pub max_tree_depth: usize,
    pub seed: u64,
    pub mask: Option<FixedMask>,
    pub bounds: Option<BoxBounds>,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        let s = NutsSettings::default();
        SamplerConfig {
            n_iterations: s.n_iterations,
            n_warmup: s.n_warmup,
            target_accept: s.target_accept,
            max_tree_depth: s.max_tree_depth,
            seed: s.seed,
            mask: None,
            bounds: None,
        }
    }
}

impl SamplerConfig {
    pub fn settings(&self) -> NutsSettings {
        NutsSettings {
            n_iterations: self.n_iterations,
            n_warmup: self.n_warmup,
            target_accept: self.target_accept,
            max_tree_depth: self.max_tree_depth,
            seed: self.seed,
            ..NutsSettings::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.settings().validate()?;
        if let Some(mask) = &self.mask {
            mask.validate()?;
        }
        Ok(())
    }
}

/// Post-warmup draws of one chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Chain {
    pub n_components: usize,
    /// Flat unconstrained draws, fixed coordinates filled in.
    pub draws: Vec<Vec<f64>>,
    pub nll_per_draw: Vec<f64>,
    pub accept_stat: Vec<f64>,
    pub tree_depth: Vec<usize>,
    pub divergences: Vec<u32>,
    pub step_size_final: f64,
    pub inv_mass_diag: Vec<f64>,
    pub seed: u64,
}

impl Chain {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    pub fn n_divergent(&self) -> usize {
        self.divergences.iter().filter(|d| **d > 0).count()
    }

    pub fn mean_accept_stat(&self) -> f64 {
        self.accept_stat.iter().sum::<f64>() / self.accept_stat.len().max(1) as f64
    }

    pub fn min_nll(&self) -> f64 {
        self.nll_per_draw.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn draw(&self, i: usize) -> Result<UnconstrainedParams> {
        UnconstrainedParams::from_flat(&self.draws[i])
    }

    pub fn table(&self) -> ChainTable {
        let natural = self
            .draws
            .iter()
            .map(|d| {
                to_natural(&UnconstrainedParams::from_flat(d).expect("chain draw length")).to_flat()
            })
            .collect();
        ChainTable {
            n_components: self.n_components,
            natural,
            nll: self.nll_per_draw.clone(),
            accept_stat: self.accept_stat.clone(),
            tree_depth: self.tree_depth.clone(),
            divergent: self.divergences.clone(),
        }
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        self.table().write_csv(writer)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        self.table().save(path)
    }
}

/// Natural-scale view of a chain, as exported for traceplots.
///
/// Rows hold every natural parameter including the last weight; the CSV form
/// omits that weight since it is fixed by the others.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTable {
    pub n_components: usize,
    pub natural: Vec<Vec<f64>>,
    pub nll: Vec<f64>,
    pub accept_stat: Vec<f64>,
    pub tree_depth: Vec<usize>,
    pub divergent: Vec<u32>,
}

impl ChainTable {
    pub fn len(&self) -> usize {
        self.natural.len()
    }

    pub fn is_empty(&self) -> bool {
        self.natural.is_empty()
    }

    /// Column `j` of the natural draws.
    pub fn column(&self, j: usize) -> Vec<f64> {
        self.natural.iter().map(|r| r[j]).collect()
    }

    pub fn header(n_components: usize) -> Vec<String> {
        let mut names = natural_names(n_components);
        names.pop();
        let mut header = vec!["iter".to_string()];
        header.extend(names);
        header.extend(["nll", "accept_stat", "tree_depth", "divergent"].map(String::from));
        header
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(Self::header(self.n_components))?;
        let k = natural_len(self.n_components) - 1;
        for i in 0..self.len() {
            let mut rec = vec![(i + 1).to_string()];
            rec.extend(self.natural[i][..k].iter().map(|v| v.to_string()));
            rec.push(self.nll[i].to_string());
            rec.push(self.accept_stat[i].to_string());
            rec.push(self.tree_depth[i].to_string());
            rec.push(self.divergent[i].to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut r = csv::Reader::from_reader(reader);
        let headers = r.headers()?.clone();
        let n_cols = headers.len();
        // iter + (5m) natural + 4 statistics
        if n_cols < 10 || (n_cols - 5) % 5 != 0 {
            return Err(Error::domain(format!("unexpected chain column count {n_cols}")));
        }
        let m = (n_cols - 5) / 5;
        let expected = Self::header(m);
        if headers.iter().map(str::trim).ne(expected.iter().map(String::as_str)) {
            return Err(Error::domain(format!(
                "chain header mismatch: expected {}",
                expected.join(",")
            )));
        }
        let k = natural_len(m) - 1;
        let mut table = ChainTable {
            n_components: m,
            natural: Vec::new(),
            nll: Vec::new(),
            accept_stat: Vec::new(),
            tree_depth: Vec::new(),
            divergent: Vec::new(),
        };
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let field = |j: usize| -> Result<f64> {
                rec[j].trim().parse::<f64>().map_err(|_| {
                    Error::domain(format!("row {}: bad number {:?}", line + 1, &rec[j]))
                })
            };
            let mut row = Vec::with_capacity(k + 1);
            for j in 0..k {
                row.push(field(1 + j)?);
            }
            let p_sum: f64 = row[k - (m - 1)..].iter().sum();
            row.push((1.0 - p_sum).max(0.0));
            table.natural.push(row);
            table.nll.push(field(1 + k)?);
            table.accept_stat.push(field(2 + k)?);
            table.tree_depth.push(field(3 + k)? as usize);
            table.divergent.push(field(4 + k)? as u32);
        }
        Ok(table)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::from(e).with_context(path.display().to_string()))?;
        Self::read_csv(BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(BufWriter::new(File::create(path)?))
    }
}

/// Samples `exp(-nll)` over the free coordinates, mapped through the bound
/// transform when bounds are set.
pub fn sample(
    start: &UnconstrainedParams,
    data: &TwinDataset,
    spec: &ModelSpec,
    cfg: &SamplerConfig,
) -> Result<Chain> {
    cfg.validate()?;
    start.validate()?;
    let dim = spec.dim();
    if start.dim() != dim {
        return Err(Error::LengthMismatch {
            expected: dim,
            got: start.dim(),
        });
    }
    let model = TwinModel::new(data, *spec)?;
    let mask = cfg.mask.clone().unwrap_or_else(|| FixedMask::none(dim));
    if mask.dim() != dim {
        return Err(Error::LengthMismatch {
            expected: dim,
            got: mask.dim(),
        });
    }
    let free_start = mask.apply(&start.to_flat());
    let masked = Masked::new(&model, &mask);
    let settings = cfg.settings();

    let (trace, free_bounds) = match &cfg.bounds {
        Some(bounds) => {
            if bounds.dim() != dim {
                return Err(Error::LengthMismatch {
                    expected: dim,
                    got: bounds.dim(),
                });
            }
            let fb = bounds.restrict(&mask.free_indices());
            let y0 = bound_inverse(&free_start, &fb)
                .map_err(|e| e.with_context("start point is not inside the sampling bounds"))?;
            let target = BoxTransformed::new(&masked, &fb);
            (run_nuts(&target, &y0, &settings)?, Some(fb))
        }
        None => (run_nuts(&masked, &free_start, &settings)?, None),
    };

    check_stuck(&trace.divergent)?;
    chain_from_trace(trace, &model, &mask, free_bounds.as_ref(), spec, cfg.seed)
}

/// Fails with [`Error::StuckChain`] when more than [`STUCK_FRACTION`] of the
/// transitions diverged.
pub fn check_stuck(divergent: &[bool]) -> Result<()> {
    let total = divergent.len();
    let n_div = divergent.iter().filter(|d| **d).count();
    if n_div as f64 > STUCK_FRACTION * total as f64 {
        return Err(Error::StuckChain {
            divergent: n_div,
            total,
        });
    }
    Ok(())
}

fn chain_from_trace(
    trace: Trace,
    model: &TwinModel<'_>,
    mask: &FixedMask,
    bounds: Option<&BoxBounds>,
    spec: &ModelSpec,
    seed: u64,
) -> Result<Chain> {
    let mut draws = Vec::with_capacity(trace.positions.len());
    let mut nll_per_draw = Vec::with_capacity(trace.positions.len());
    for y in &trace.positions {
        let free = match bounds {
            Some(b) => bound_transform(y, b).0,
            None => y.clone(),
        };
        let full = mask.embed(&free)?;
        let nll = model.value(&full);
        if !nll.is_finite() {
            return Err(Error::domain("retained draw has a non-finite NLL"));
        }
        nll_per_draw.push(nll);
        draws.push(full);
    }
    Ok(Chain {
        n_components: spec.n_components,
        draws,
        nll_per_draw,
        accept_stat: trace.accept_stat,
        tree_depth: trace.tree_depth,
        divergences: trace.divergent.iter().map(|&d| d as u32).collect(),
        step_size_final: trace.step_size,
        inv_mass_diag: trace.inv_mass_diag,
        seed,
    })
}
