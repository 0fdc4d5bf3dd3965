//! Acceptance suite. Runs every criterion, prints one line each, and exits
//! non-zero if any fails or overruns its time budget.

mod common;

use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};
use twinmix::diagnostics::{aic_bic, geweke, global_quantities};
use twinmix::explorer::{explore_objective, restart_all, run_strategy, run_strategy_detailed, Strategy};
use twinmix::model::{nll, simulate, ModelSpec, SimulationLayout, TwinDataset};
use twinmix::nuts::{leapfrog, run_nuts, NutsSettings};
use twinmix::objective::{FnObjective, Objective};
use twinmix::optim::{minimize, moment_start, standard_errors, OptimConfig, OptimResult};
use twinmix::params::{
    flat_len, from_natural, to_natural, BoxBounds, FixedMask, NaturalParams, ParamBlock,
    UnconstrainedParams,
};
use twinmix::sampler::SamplerConfig;

const DATA_SEED: u64 = 2024;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn dataset() -> TwinDataset {
    simulate(&NaturalParams::reference_truth(), SimulationLayout::default(), DATA_SEED).unwrap()
}

fn truth_start() -> UnconstrainedParams {
    from_natural(&NaturalParams::reference_truth()).unwrap()
}

fn spec3() -> ModelSpec {
    ModelSpec::new(3).unwrap()
}

fn global_values() -> Outcome {
    let g = global_quantities(&NaturalParams::reference_truth()).map_err(|e| e.to_string())?;
    let got = [g.mu_g, g.sigma_g, g.rho_mz_g, g.rho_dz_g];
    let want = [22.30, 2.33, 0.92, 0.87];
    let worst = got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    check(
        worst < 0.01,
        format!(
            "({:.4}, {:.4}, {:.4}, {:.4}) vs (22.30, 2.33, 0.92, 0.87), max diff {worst:.4}",
            got[0], got[1], got[2], got[3]
        ),
    )
}

fn information_criteria() -> Outcome {
    let (aic, bic) = aic_bic(4070.52, 15, 1200);
    check(
        (aic - 8171.04).abs() < 0.005 && (bic - 8247.4).abs() < 0.05,
        format!("AIC {aic:.3}, BIC {bic:.3}"),
    )
}

fn gradient_check() -> Outcome {
    let data = dataset();
    let spec = spec3();
    let mut rng = common::rng(303);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let u = common::random_point(&mut rng);
        let g = nll(&u, &data, &spec).map_err(|e| e.to_string())?.gradient;
        let fd = common::fd_gradient(&u, &data, &spec);
        let floor = common::fd_rounding_bound(&u, &data, &spec);
        for ((a, b), f) in g.iter().zip(&fd).zip(&floor) {
            worst = worst.max(common::rel_err(*a, *b, f.max(1e-8)));
        }
    }
    check(worst < 1e-6, format!("100 points, max relative error {worst:.2e}"))
}

fn recovery() -> Outcome {
    let data = dataset();
    let spec = spec3();
    let truth = NaturalParams::reference_truth();
    let fit = minimize(&truth_start(), &data, &spec, &OptimConfig::default(), None)
        .map_err(|e| e.to_string())?;
    if !fit.converged {
        return Err(format!("fit stopped with {}", fit.termination.as_str()));
    }
    let se = standard_errors(&fit.argmin, &data, &spec).map_err(|e| e.to_string())?;
    let est = to_natural(&fit.argmin).to_flat();
    let worst = est
        .iter()
        .zip(truth.to_flat())
        .zip(se.natural.to_flat())
        .map(|((e, t), s)| (e - t).abs() / s)
        .fold(0.0, f64::max);
    check(
        worst <= 4.0,
        format!("nll {:.2}, largest |estimate - truth| = {worst:.2} SE", fit.nll),
    )
}

fn fit_components(data: &TwinDataset, m: usize) -> Result<OptimResult, String> {
    let spec = ModelSpec::new(m).map_err(|e| e.to_string())?;
    let start = if m == 3 {
        truth_start()
    } else {
        moment_start(data, m).map_err(|e| e.to_string())?
    };
    let fit = minimize(&start, data, &spec, &OptimConfig::default(), None).map_err(|e| e.to_string())?;
    if fit.converged {
        Ok(fit)
    } else {
        Err(format!("m={m} fit stopped with {}", fit.termination.as_str()))
    }
}

fn model_selection() -> Outcome {
    let data = dataset();
    let mut ic = Vec::new();
    for m in 1..=3 {
        let fit = fit_components(&data, m)?;
        ic.push(aic_bic(fit.nll, flat_len(m), data.len()));
    }
    let detail = format!(
        "AIC {:.1} / {:.1} / {:.1}, BIC {:.1} / {:.1} / {:.1} for m = 1 / 2 / 3",
        ic[0].0, ic[1].0, ic[2].0, ic[0].1, ic[1].1, ic[2].1
    );
    check(
        ic[2].0 < ic[1].0 && ic[1].0 < ic[0].0 && ic[2].1 < ic[1].1 && ic[1].1 < ic[0].1,
        detail,
    )
}

fn std_normal(dim: usize) -> impl Objective {
    FnObjective::new(dim, |x: &[f64], g: &mut [f64]| {
        g.copy_from_slice(x);
        0.5 * x.iter().map(|v| v * v).sum::<f64>()
    })
}

fn sampler_calibration() -> Outcome {
    let target = std_normal(2);
    let settings = NutsSettings {
        n_iterations: 2500,
        n_warmup: 500,
        seed: 11,
        ..Default::default()
    };
    let t = run_nuts(&target, &[2.0, -2.0], &settings).map_err(|e| e.to_string())?;
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut failures = Vec::new();
    let mut parts = Vec::new();
    for j in 0..2 {
        let col: Vec<f64> = t.positions.iter().map(|q| q[j]).collect();
        let n = col.len() as f64;
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let p = common::ks_p_value(common::ks_statistic(&col, |x| normal.cdf(x)), col.len());
        if mean.abs() >= 0.1 || (var - 1.0).abs() >= 0.15 || p <= 0.01 {
            failures.push(j);
        }
        parts.push(format!("x{j}: mean {mean:+.3} var {var:.3} KS p {p:.3}"));
    }
    let accept = t.accept_stat.iter().sum::<f64>() / t.accept_stat.len() as f64;

    let steps = |mut q: Vec<f64>, mut p: Vec<f64>, eps: f64| {
        for _ in 0..50 {
            (q, p) = leapfrog(&q, &p, eps, &target, &[1.0, 1.0]);
        }
        (q, p)
    };
    let mut rng = common::rng(5);
    let mut rev: f64 = 0.0;
    for _ in 0..100 {
        let q0: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let p0: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
        let eps = rng.random_range(0.05..0.8);
        let (q1, p1) = steps(q0.clone(), p0.clone(), eps);
        let back: Vec<f64> = p1.iter().map(|v| -v).collect();
        let (q2, p2) = steps(q1, back, eps);
        for i in 0..2 {
            rev = rev.max((q2[i] - q0[i]).abs()).max((p2[i] + p0[i]).abs());
        }
    }
    check(
        t.positions.len() == 2000 && failures.is_empty() && (accept - 0.95).abs() <= 0.05 && rev < 1e-8,
        format!(
            "{} draws, {}, accept {accept:.3}, reversibility error {rev:.1e}",
            t.positions.len(),
            parts.join(", ")
        ),
    )
}

fn strategy_contracts() -> Outcome {
    let data = dataset();
    let spec = spec3();
    let fit = fit_components(&data, 3)?;
    let start = fit.argmin;
    let cfg = SamplerConfig {
        seed: 100,
        ..Default::default()
    };
    let err = |e: twinmix::Error| e.to_string();

    let looped = run_strategy_detailed(&Strategy::SeedLoop { n_seeds: 15 }, &start, &data, &spec, &cfg)
        .map_err(err)?;
    let seed_mins: Vec<f64> = looped.seeds.iter().filter_map(|s| s.min_nll).collect();
    let lowest = seed_mins.iter().copied().fold(f64::INFINITY, f64::min);
    let loop_ok = looped.seeds.len() == 15 && looped.chain.min_nll() == lowest;

    let mask = FixedMask::from_blocks(&start, &[ParamBlock::Alpha, ParamBlock::Beta]).map_err(err)?;
    let fixed_idx: Vec<usize> = (0..15).filter(|&i| mask.is_fixed(i)).collect();
    let fixed = run_strategy(&Strategy::FixedSubset { mask: mask.clone() }, &start, &data, &spec, &cfg)
        .map_err(err)?;
    let fixed_ok = fixed.draws.iter().all(|d| {
        fixed_idx
            .iter()
            .all(|&i| d[i].to_bits() == mask.fixed_value(i).unwrap().to_bits())
    });

    let bounds = BoxBounds::sampling_default(3);
    let bounded = run_strategy(&Strategy::Bounded { bounds: bounds.clone() }, &start, &data, &spec, &cfg)
        .map_err(err)?;
    let bounded_ok = bounded.draws.iter().all(|d| {
        bounds.contains(d) && d[6..12].iter().all(|r| r.abs() < 1.0)
    });

    check(
        loop_ok && fixed_ok && bounded_ok && !fixed.is_empty() && !bounded.is_empty(),
        format!(
            "seed loop min {:.3} of {} chains ({}); {} fixed-subset draws hold {} coordinates ({}); {} bounded draws in box ({})",
            looped.chain.min_nll(),
            seed_mins.len(),
            if loop_ok { "lowest" } else { "NOT lowest" },
            fixed.len(),
            fixed_idx.len(),
            if fixed_ok { "bit-exact" } else { "MOVED" },
            bounded.len(),
            if bounded_ok { "all" } else { "NOT all" },
        ),
    )
}

fn explorer_finding() -> Outcome {
    let data = dataset();
    let spec = spec3();
    let optim = OptimConfig::default();
    let err = |e: twinmix::Error| e.to_string();

    // best of several direct fits
    let mut rng = common::rng(808);
    let mut starts = vec![truth_start()];
    starts.extend((0..20).map(|_| common::random_point(&mut rng)));
    let mut direct: Option<OptimResult> = None;
    for s in &starts {
        let r = minimize(s, &data, &spec, &optim, None).map_err(err)?;
        if r.converged && direct.as_ref().is_none_or(|d| r.nll < d.nll) {
            direct = Some(r);
        }
    }
    let direct = direct.ok_or("no direct fit converged")?;

    let cfg = SamplerConfig {
        seed: 4070,
        ..Default::default()
    };
    let chain = run_strategy(
        &Strategy::Bounded { bounds: BoxBounds::sampling_default(3) },
        &direct.argmin,
        &data,
        &spec,
        &cfg,
    )
    .map_err(err)?;
    let report = restart_all(&chain, &data, &spec, &optim).map_err(err)?;
    let best = report.min_nll_by_strategy.ok_or("no restart converged")?;
    let direct_nat = to_natural(&direct.argmin).to_flat();
    let gap = report
        .optima_clusters
        .first()
        .map(|c| {
            c.representative
                .to_flat()
                .iter()
                .zip(&direct_nat)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        })
        .unwrap_or(f64::INFINITY);
    check(
        best >= direct.nll - 1e-6 && report.optima_clusters.len() == 1 && gap < 1e-4,
        format!(
            "{} restarts, {} converged, {} cluster(s), best {best:.6} vs direct {:.6}, natural gap {gap:.1e}",
            report.per_restart.len(),
            report.n_converged,
            report.optima_clusters.len(),
            direct.nll
        ),
    )
}

fn multimodality_oracle() -> Outcome {
    let obj = common::bimodal_profile(200, 77);
    let mut starts = Vec::new();
    for (x0, seed) in [(3.0, 1), (-3.0, 2)] {
        let settings = NutsSettings {
            n_iterations: 300,
            n_warmup: 150,
            seed,
            ..Default::default()
        };
        let t = run_nuts(&obj, &[x0], &settings).map_err(|e| e.to_string())?;
        starts.extend(t.positions);
    }
    let bounds = BoxBounds::new(vec![-10.0], vec![10.0]).unwrap();
    let ex = explore_objective(&obj, &starts, &bounds, &OptimConfig::default(), 1e-4, 1e-6)
        .map_err(|e| e.to_string())?;
    let global = ex.global().ok_or("no converged minimum")?;
    let (gx, gf) = common::grid_minimum(&obj, -6.0, 6.0, 10_000);
    let step = 12.0 / 9999.0;
    check(
        ex.clusters.len() == 2 && (global.x[0] - gx).abs() <= step && (gf - global.value).abs() < 1e-4,
        format!(
            "{} clusters, global at {:.5} (grid {gx:.5}, spacing {step:.1e}), value gap {:.1e}",
            ex.clusters.len(),
            global.x[0],
            gf - global.value
        ),
    )
}

fn geweke_distribution() -> Outcome {
    let mut rng = common::rng(1001);
    let mut abs_z = Vec::with_capacity(500);
    for _ in 0..500 {
        let chain: Vec<f64> = (0..10_000).map(|_| StandardNormal.sample(&mut rng)).collect();
        abs_z.push(geweke(&chain, 0.1, 0.5).map_err(|e| e.to_string())?.abs());
    }
    let mean = abs_z.iter().sum::<f64>() / 500.0;
    let frac = abs_z.iter().filter(|z| **z <= 1.28).count() as f64 / 500.0;
    check(
        (mean - 0.798).abs() <= 0.08 && (frac - 0.80).abs() <= 0.05,
        format!("mean |Z| {mean:.3}, fraction |Z| <= 1.28 {frac:.3}"),
    )
}

struct Criterion {
    name: &'static str,
    budget: Duration,
    run: fn() -> Outcome,
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().collect();
    if args.iter().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let filter = args.iter().skip(1).find(|a| !a.starts_with('-'));
    let secs = Duration::from_secs;
    let criteria = [
        Criterion { name: "global quantities at the truth", budget: Duration::from_millis(1), run: global_values },
        Criterion { name: "AIC/BIC identity", budget: Duration::from_millis(1), run: information_criteria },
        Criterion { name: "analytic gradient vs finite differences", budget: secs(30), run: gradient_check },
        Criterion { name: "recovery within 4 SE", budget: secs(60), run: recovery },
        Criterion { name: "model selection ordering", budget: secs(300), run: model_selection },
        Criterion { name: "NUTS calibration on a 2-D Gaussian", budget: secs(30), run: sampler_calibration },
        Criterion { name: "strategy contracts", budget: secs(600), run: strategy_contracts },
        Criterion { name: "restarts from a bounded chain", budget: secs(900), run: explorer_finding },
        Criterion { name: "bimodal profile oracle", budget: secs(60), run: multimodality_oracle },
        Criterion { name: "Geweke null distribution", budget: secs(3600), run: geweke_distribution },
    ];
    let mut failed = 0;
    for (i, c) in criteria.iter().enumerate() {
        if filter.is_some_and(|f| !c.name.contains(f.as_str())) {
            continue;
        }
        let t0 = Instant::now();
        let outcome = (c.run)();
        let elapsed = t0.elapsed();
        let in_time = elapsed <= c.budget;
        let (pass, detail) = match outcome {
            Ok(d) => (in_time, d),
            Err(d) => (false, d),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} [{}] ({:.3} s, budget {} s{})",
            i + 1,
            if pass { "PASS" } else { "FAIL" },
            c.name,
            detail,
            elapsed.as_secs_f64(),
            c.budget.as_secs_f64(),
            if in_time { "" } else { ", over budget" }
        );
    }
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
