use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use twinmix::diagnostics::{
    aic_bic, diagnose, format_sig, global_quantities, global_quantities_chain, summarize,
    write_summary_csv, DiagnosticsReport, GlobalQuantities,
};
use twinmix::explorer::{
    detect_collapse, restart_all, run_strategy_detailed, CollapseSummary, CollapseThresholds,
    ExplorationReport, SeedOutcome, Strategy,
};
use twinmix::model::{simulate as simulate_data, ModelSpec, SimulationLayout, TwinDataset};
use twinmix::optim::{minimize, moment_start, standard_errors, OptimResult, StandardErrors};
use twinmix::params::{
    flat_len, from_natural, to_natural, BoxBounds, FixedMask, NaturalParams, ParamBlock,
    UnconstrainedParams,
};
use twinmix::sampler::{Chain, ChainTable, SamplerConfig};

use crate::config::{Manifest, RunConfig, StrategyKind};
use crate::error::CliError;
use crate::seed::derive;

type CliResult<T> = Result<T, CliError>;

fn out_dir(cfg: &RunConfig) -> CliResult<&Path> {
    fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::usage(format!("{}: {e}", cfg.out.display())))?;
    Ok(&cfg.out)
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn write_manifest(cfg: &RunConfig, command: &str, seeds: Vec<(String, u64)>) -> CliResult<()> {
    let manifest = Manifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        derived_seeds: seeds,
    };
    write_json(&out_dir(cfg)?.join("manifest.json"), &manifest)
}

fn load_data(cfg: &RunConfig) -> CliResult<TwinDataset> {
    let path = cfg
        .model
        .data
        .as_ref()
        .ok_or_else(|| CliError::usage("a dataset is required (--data)"))?;
    let data = TwinDataset::load(path)?;
    if data.is_empty() {
        return Err(CliError::usage(format!("{}: dataset is empty", path.display())));
    }
    Ok(data)
}

fn model_spec(cfg: &RunConfig) -> CliResult<ModelSpec> {
    Ok(ModelSpec::new(cfg.model.components)?)
}

/// Parameters from a JSON file: a fit output, natural parameters, or
/// unconstrained parameters.
fn read_params(path: &Path) -> CliResult<UnconstrainedParams> {
    let value: serde_json::Value = read_json(path)?;
    let parsed = if let Some(u) = value.get("params_unconstrained") {
        serde_json::from_value(u.clone()).map_err(CliError::from)
    } else if value.get("mu").is_some() {
        let n: NaturalParams = serde_json::from_value(value)?;
        Ok(from_natural(&n)?)
    } else {
        serde_json::from_value(value).map_err(CliError::from)
    };
    parsed.map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
}

fn truth_start(spec: &ModelSpec) -> CliResult<UnconstrainedParams> {
    if spec.n_components != 3 {
        return Err(CliError::usage(
            "the reference truth has three components; use --start moments",
        ));
    }
    Ok(from_natural(&NaturalParams::reference_truth())?)
}

/// Resolves `--start`. `auto` is the reference truth for three components
/// and the moment start otherwise; `fit` runs the optimizer from `auto`.
fn resolve_start(
    cfg: &RunConfig,
    data: &TwinDataset,
    spec: &ModelSpec,
    default: &str,
) -> CliResult<UnconstrainedParams> {
    let mode = cfg.model.start.as_deref().unwrap_or(default);
    let auto = || -> CliResult<UnconstrainedParams> {
        if spec.n_components == 3 {
            truth_start(spec)
        } else {
            Ok(moment_start(data, spec.n_components)?)
        }
    };
    let start = match mode {
        "auto" => auto()?,
        "truth" => truth_start(spec)?,
        "moments" => moment_start(data, spec.n_components)?,
        "fit" => {
            let r = minimize(&auto()?, data, spec, &cfg.optim, None)?;
            if !r.nll.is_finite() {
                return Err(CliError::numerical("start fit found no valid point"));
            }
            r.argmin
        }
        path => read_params(Path::new(path))?,
    };
    if start.n_components() != spec.n_components {
        return Err(CliError::usage(format!(
            "start has {} components, model has {}",
            start.n_components(),
            spec.n_components
        )));
    }
    Ok(start)
}

pub fn simulate(cfg: &RunConfig) -> CliResult<()> {
    let s = &cfg.simulate;
    if s.n == 0 {
        return Err(CliError::usage("--n must be positive"));
    }
    let params = match &s.params {
        Some(p) => read_json::<NaturalParams>(p)?,
        None => NaturalParams::reference_truth(),
    };
    let layout = SimulationLayout {
        n_total: s.n,
        frac_mz: s.frac_mz,
        frac_male: s.frac_male,
    };
    let seed = derive(cfg.seed, "simulate", 0);
    let data = simulate_data(&params, layout, seed)?;
    let dir = out_dir(cfg)?;
    data.save(dir.join("data.csv"))?;
    write_manifest(cfg, "simulate", vec![("simulate".into(), seed)])?;
    println!("wrote {} pairs ({} MZ) to {}", data.len(), data.n_mz(), dir.join("data.csv").display());
    Ok(())
}

/// Fit output: the optimizer result plus model-size bookkeeping.
#[derive(Debug, Serialize, Deserialize)]
pub struct FitOutput {
    #[serde(flatten)]
    pub result: OptimResult,
    pub n_components: usize,
    pub n_obs: usize,
    pub k: usize,
    pub aic: Option<f64>,
    pub bic: Option<f64>,
    pub standard_errors: Option<StandardErrors>,
    pub standard_error_failure: Option<String>,
}

pub fn fit(cfg: &RunConfig) -> CliResult<()> {
    let data = load_data(cfg)?;
    let spec = model_spec(cfg)?;
    let start = resolve_start(cfg, &data, &spec, "auto")?;
    let result = minimize(&start, &data, &spec, &cfg.optim, None)?;
    let k = flat_len(spec.n_components);
    let (aic, bic) = aic_bic(result.nll, k, data.len());
    let (se, se_err) = if result.converged {
        match standard_errors(&result.argmin, &data, &spec) {
            Ok(s) => (Some(s), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    let out = FitOutput {
        n_components: spec.n_components,
        n_obs: data.len(),
        k,
        aic: aic.is_finite().then_some(aic),
        bic: bic.is_finite().then_some(bic),
        standard_errors: se,
        standard_error_failure: se_err,
        result,
    };
    let dir = out_dir(cfg)?;
    let path = dir.join(format!("fit_m{}.json", spec.n_components));
    write_json(&path, &out)?;
    write_manifest(cfg, "fit", vec![])?;
    println!(
        "{}: nll {} ({}, {} iterations)",
        path.display(),
        out.result.nll,
        out.result.termination.as_str(),
        out.result.iterations
    );
    if !out.result.converged {
        return Err(CliError::numerical(format!(
            "optimizer did not converge: {}",
            out.result.termination.as_str()
        )));
    }
    Ok(())
}

fn build_strategy(cfg: &RunConfig, start: &UnconstrainedParams) -> CliResult<Strategy> {
    let s = &cfg.sampler;
    let m = cfg.model.components;
    Ok(match s.strategy {
        StrategyKind::Base => Strategy::Base,
        StrategyKind::Seedloop => Strategy::SeedLoop { n_seeds: s.seeds },
        StrategyKind::Fixed => {
            let blocks = s
                .fix
                .iter()
                .map(|b| {
                    ParamBlock::parse(b)
                        .ok_or_else(|| CliError::usage(format!("unknown parameter block {b:?}")))
                })
                .collect::<CliResult<Vec<_>>>()?;
            Strategy::FixedSubset {
                mask: FixedMask::from_blocks(start, &blocks)?,
            }
        }
        StrategyKind::Bounded => Strategy::Bounded {
            bounds: match &s.bounds {
                Some(p) => read_json::<BoxBounds>(p)?,
                None => BoxBounds::sampling_default(m),
            },
        },
    })
}

/// Sampler statistics and diagnostics written next to a chain.
#[derive(Debug, Serialize)]
struct ChainDiagnostics<'a> {
    strategy: &'a str,
    seeds: &'a [SeedOutcome],
    n_draws: usize,
    n_divergent: usize,
    mean_accept_stat: f64,
    step_size: f64,
    inv_mass_diag: &'a [f64],
    collapse: CollapseSummary,
    diagnostics: DiagnosticsReport,
}

fn sample_chain(cfg: &RunConfig, data: &TwinDataset, spec: &ModelSpec) -> CliResult<(Chain, u64)> {
    let start = resolve_start(cfg, data, spec, "fit")?;
    let strategy = build_strategy(cfg, &start)?;
    let seed = derive(cfg.seed, "sample", 0);
    let s = &cfg.sampler;
    let sampler_cfg = SamplerConfig {
        n_iterations: s.iters,
        n_warmup: s.warmup,
        target_accept: s.target_accept,
        max_tree_depth: s.max_depth,
        seed,
        mask: None,
        bounds: None,
    };
    let outcome = run_strategy_detailed(&strategy, &start, data, spec, &sampler_cfg)?;
    let chain = outcome.chain;
    let table = chain.table();
    let diag = ChainDiagnostics {
        strategy: strategy.name(),
        seeds: &outcome.seeds,
        n_draws: chain.len(),
        n_divergent: chain.n_divergent(),
        mean_accept_stat: chain.mean_accept_stat(),
        step_size: chain.step_size_final,
        inv_mass_diag: &chain.inv_mass_diag,
        collapse: detect_collapse(&table, &CollapseThresholds::default())?,
        diagnostics: diagnose(&table, data.len())?,
    };
    let dir = out_dir(cfg)?;
    table.save(dir.join("chain.csv"))?;
    write_json(&dir.join("chain.json"), &chain)?;
    write_json(&dir.join("diagnostics.json"), &diag)?;
    write_summary_csv(&diag.diagnostics.summary, fs::File::create(dir.join("summary.csv"))?)?;
    println!(
        "{}: {} draws, {} divergent, min nll {}, {} effective components",
        dir.join("chain.csv").display(),
        chain.len(),
        chain.n_divergent(),
        chain.min_nll(),
        diag.collapse.n_effective_components
    );
    Ok((chain, seed))
}

pub fn sample(cfg: &RunConfig) -> CliResult<()> {
    let data = load_data(cfg)?;
    let spec = model_spec(cfg)?;
    let (_, seed) = sample_chain(cfg, &data, &spec)?;
    write_manifest(cfg, "sample", vec![("sample".into(), seed)])
}

pub fn explore(cfg: &RunConfig) -> CliResult<()> {
    let data = load_data(cfg)?;
    let spec = model_spec(cfg)?;
    let (chain, seeds) = match &cfg.sampler.chain {
        Some(p) => (read_json::<Chain>(p)?, vec![]),
        None => {
            let (c, seed) = sample_chain(cfg, &data, &spec)?;
            (c, vec![("sample".to_string(), seed)])
        }
    };
    let report = restart_all(&chain, &data, &spec, &cfg.optim)?;
    let dir = out_dir(cfg)?;
    write_json(&dir.join("report.json"), &report)?;
    report.write_restarts_csv(fs::File::create(dir.join("restarts.csv"))?)?;
    write_manifest(cfg, "explore", seeds)?;
    println!(
        "{}: {} restarts, {} converged, {} optimum cluster(s), best nll {}",
        dir.join("report.json").display(),
        report.per_restart.len(),
        report.n_converged,
        report.optima_clusters.len(),
        report
            .min_nll_by_strategy
            .map_or("none".to_string(), |v| v.to_string())
    );
    if report.n_converged == 0 {
        return Err(CliError::numerical("no restart converged"));
    }
    Ok(())
}

fn fit_files(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = (1..=3)
        .map(|m| dir.join(format!("fit_m{m}.json")))
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    Ok(files)
}

fn global_row(label: &str, g: &GlobalQuantities) -> Vec<String> {
    let mut r = vec![label.to_string()];
    r.extend([g.mu_g, g.sigma_g, g.rho_mz_g, g.rho_dz_g].map(|v| format_sig(v, 6)));
    r
}

pub fn report(cfg: &RunConfig) -> CliResult<()> {
    let dir = cfg.report.dir.clone().unwrap_or_else(|| cfg.out.clone());
    if !dir.is_dir() && !cfg.report.truth {
        return Err(CliError::usage(format!("{}: not a directory", dir.display())));
    }
    let fits: Vec<FitOutput> = if dir.is_dir() {
        fit_files(&dir)?
            .iter()
            .map(|p| read_json(p))
            .collect::<CliResult<_>>()?
    } else {
        Vec::new()
    };
    let chain_path = dir.join("chain.csv");
    let chain = chain_path
        .is_file()
        .then(|| ChainTable::load(&chain_path))
        .transpose()?;
    let explore_path = dir.join("report.json");
    let exploration: Option<ExplorationReport> = explore_path
        .is_file()
        .then(|| read_json(&explore_path))
        .transpose()?;
    if fits.is_empty() && chain.is_none() && exploration.is_none() && !cfg.report.truth {
        return Err(CliError::usage(format!(
            "{}: no fit_m*.json, chain.csv or report.json to tabulate",
            dir.display()
        )));
    }
    let out = out_dir(cfg)?;
    let mut written = Vec::new();

    // global mixture quantities
    let mut rows = Vec::new();
    if cfg.report.truth {
        rows.push(global_row("truth", &global_quantities(&NaturalParams::reference_truth())?));
    }
    for f in &fits {
        if f.result.nll.is_finite() {
            let g = global_quantities(&to_natural(&f.result.argmin))?;
            rows.push(global_row(&format!("fit m={}", f.n_components), &g));
        }
    }
    if let Some(c) = &chain {
        let g = global_quantities_chain(c)?;
        rows.push(global_row("chain per-draw mean", &g.per_draw_mean));
        rows.push(global_row("chain at means", &g.at_means));
    }
    if let Some(b) = exploration.as_ref().and_then(|e| e.best.as_ref()) {
        rows.push(global_row("explore best", &global_quantities(&to_natural(&b.result.argmin))?));
    }
    if !rows.is_empty() {
        let mut w = csv::Writer::from_path(out.join("report_global.csv"))?;
        w.write_record(["source", "mu_g", "sigma_g", "rho_mz_g", "rho_dz_g"])?;
        for r in &rows {
            w.write_record(r)?;
        }
        w.flush()?;
        written.push("report_global.csv");
    }

    if let Some(c) = &chain {
        write_summary_csv(&summarize(c), fs::File::create(out.join("report_summary.csv"))?)?;
        written.push("report_summary.csv");
    }

    // lowest NLL per source
    let mut nll_rows: Vec<(String, f64)> = fits
        .iter()
        .map(|f| (format!("fit m={}", f.n_components), f.result.nll))
        .collect();
    if let Some(c) = &chain {
        nll_rows.push(("chain min".into(), c.nll.iter().copied().fold(f64::INFINITY, f64::min)));
    }
    if let Some(v) = exploration.as_ref().and_then(|e| e.min_nll_by_strategy) {
        nll_rows.push(("explore best".into(), v));
    }
    if !nll_rows.is_empty() {
        let mut w = csv::Writer::from_path(out.join("report_nll.csv"))?;
        w.write_record(["source", "nll"])?;
        for (s, v) in &nll_rows {
            w.write_record([s.clone(), format!("{v:.2}")])?;
        }
        w.flush()?;
        written.push("report_nll.csv");
    }

    if !fits.is_empty() {
        let mut w = csv::Writer::from_path(out.join("report_ic.csv"))?;
        w.write_record(["components", "k", "nll", "aic", "bic"])?;
        for f in &fits {
            let (aic, bic) = aic_bic(f.result.nll, f.k, f.n_obs);
            w.write_record([
                f.n_components.to_string(),
                f.k.to_string(),
                format_sig(f.result.nll, 6),
                format_sig(aic, 6),
                format_sig(bic, 6),
            ])?;
        }
        w.flush()?;
        written.push("report_ic.csv");
    }

    write_manifest(cfg, "report", vec![])?;
    println!("wrote {} to {}", written.join(", "), out.display());
    Ok(())
}
