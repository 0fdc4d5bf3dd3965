mod common;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use twinmix::model::{simulate, ModelSpec, SimulationLayout, TwinModel};
use twinmix::nuts::{leapfrog_step, run_nuts, NutsSettings, PhasePoint};
use twinmix::objective::{FnObjective, Objective};
use twinmix::params::{
    from_natural, BoxBounds, FixedMask, NaturalParams, ParamBlock, UnconstrainedParams,
};
use twinmix::sampler::{sample, SamplerConfig};

fn std_normal(dim: usize) -> impl Objective {
    FnObjective::new(dim, |x: &[f64], g: &mut [f64]| {
        g.copy_from_slice(x);
        0.5 * x.iter().map(|v| v * v).sum::<f64>()
    })
}

#[test]
fn kolmogorov_helper_sanity() {
    // classic critical value: D * sqrt(n) ~ 1.628 at alpha = 0.01
    let p = common::ks_p_value(1.628 / 1000f64.sqrt(), 1000);
    assert!((p - 0.01).abs() < 0.002, "{p}");
}

#[test]
fn gaussian_2d_moments() {
    let settings = NutsSettings {
        n_iterations: 2500,
        n_warmup: 500,
        seed: 11,
        ..Default::default()
    };
    let t = run_nuts(&std_normal(2), &[2.0, -2.0], &settings).unwrap();
    assert_eq!(t.positions.len(), 2000);
    for j in 0..2 {
        let col: Vec<f64> = t.positions.iter().map(|q| q[j]).collect();
        let mean = col.iter().sum::<f64>() / col.len() as f64;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (col.len() - 1) as f64;
        assert!(mean.abs() < 0.1, "mean {mean}");
        assert!((var - 1.0).abs() < 0.15, "var {var}");
    }
    let accept = t.accept_stat.iter().sum::<f64>() / t.accept_stat.len() as f64;
    assert!((accept - 0.95).abs() <= 0.05, "accept {accept}");
    assert_eq!(t.n_divergent(), 0);
}

#[test]
fn gaussian_1d_passes_kolmogorov_smirnov() {
    let settings = NutsSettings {
        n_iterations: 5500,
        n_warmup: 500,
        seed: 4,
        ..Default::default()
    };
    let t = run_nuts(&std_normal(1), &[0.3], &settings).unwrap();
    let draws: Vec<f64> = t.positions.iter().map(|q| q[0]).collect();
    assert_eq!(draws.len(), 5000);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let d = common::ks_statistic(&draws, |x| normal.cdf(x));
    let p = common::ks_p_value(d, draws.len());
    assert!(p > 0.01, "D = {d}, p = {p}");
}

#[test]
fn scaled_gaussian_adapts_mass() {
    let scales = [0.1, 5.0];
    let target = FnObjective::new(2, move |x: &[f64], g: &mut [f64]| {
        let mut f = 0.0;
        for i in 0..2 {
            let z = x[i] / scales[i];
            f += 0.5 * z * z;
            g[i] = z / scales[i];
        }
        f
    });
    let settings = NutsSettings {
        n_iterations: 2000,
        n_warmup: 1000,
        seed: 8,
        ..Default::default()
    };
    let t = run_nuts(&target, &[0.0, 0.0], &settings).unwrap();
    for (i, s) in scales.iter().enumerate() {
        let ratio = t.inv_mass_diag[i] / (s * s);
        assert!(ratio > 0.7 && ratio < 1.4, "coordinate {i}: {ratio}");
    }
}

fn twin_setup() -> (twinmix::model::TwinDataset, ModelSpec, UnconstrainedParams) {
    let truth = NaturalParams::reference_truth();
    let data = simulate(&truth, SimulationLayout::default(), 2024).unwrap();
    (data, ModelSpec::new(3).unwrap(), from_natural(&truth).unwrap())
}

#[test]
fn energy_drift_on_twin_likelihood() {
    let (data, spec, start) = twin_setup();
    let model = TwinModel::new(&data, spec).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // curvature-scaled diagonal mass, as warmup adaptation would produce
    let hess = twinmix::optim::finite_difference_hessian(&model, &start.to_flat());
    let inv_mass: Vec<f64> = (0..15).map(|i| 1.0 / hess[i][i]).collect();
    let mut z = PhasePoint::new(&model, start.to_flat(), vec![0.0; 15]);
    z.p = twinmix::nuts::momentum_refresh(&mut rng, &inv_mass);
    let h0 = z.hamiltonian(&inv_mass);
    for _ in 0..100 {
        z = leapfrog_step(&model, &z, 1e-4, &inv_mass);
    }
    let drift = (z.hamiltonian(&inv_mass) - h0).abs();
    assert!(drift < 1e-4, "drift {drift}");
}

#[test]
fn twin_chain_is_reproducible_and_finite() {
    let (data, spec, start) = twin_setup();
    let cfg = SamplerConfig {
        n_iterations: 200,
        n_warmup: 100,
        seed: 9,
        ..Default::default()
    };
    let a = sample(&start, &data, &spec, &cfg).unwrap();
    let b = sample(&start, &data, &spec, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 100);
    assert!(a.nll_per_draw.iter().all(|v| v.is_finite()));
    assert!(a.tree_depth.iter().all(|&d| d <= 10));
    assert_eq!(a.inv_mass_diag.len(), 15);
}

#[test]
fn bounded_draws_stay_inside_the_box() {
    let (data, spec, start) = twin_setup();
    let bounds = BoxBounds::sampling_default(3);
    let cfg = SamplerConfig {
        n_iterations: 200,
        n_warmup: 100,
        seed: 3,
        bounds: Some(bounds.clone()),
        ..Default::default()
    };
    let chain = sample(&start, &data, &spec, &cfg).unwrap();
    for d in &chain.draws {
        for (i, v) in d.iter().enumerate() {
            assert!(*v > bounds.lower()[i] && *v < bounds.upper()[i]);
        }
    }
    let rho = ParamBlock::RhoMz.indices(3).start..ParamBlock::RhoDz.indices(3).end;
    assert!(chain.draws.iter().all(|d| d[rho.clone()].iter().all(|r| r.abs() < 1.0)));
}

#[test]
fn masked_coordinates_are_bit_exact() {
    let (data, spec, start) = twin_setup();
    let mask = FixedMask::from_blocks(&start, &[ParamBlock::Alpha, ParamBlock::PreP]).unwrap();
    let cfg = SamplerConfig {
        n_iterations: 150,
        n_warmup: 75,
        seed: 5,
        mask: Some(mask.clone()),
        ..Default::default()
    };
    let chain = sample(&start, &data, &spec, &cfg).unwrap();
    let flat = start.to_flat();
    for d in &chain.draws {
        for i in 0..15 {
            if mask.is_fixed(i) {
                assert_eq!(d[i].to_bits(), flat[i].to_bits());
            }
        }
    }
    assert_eq!(chain.inv_mass_diag.len(), mask.free_dim());
}

#[test]
fn start_outside_bounds_is_rejected() {
    let (data, spec, mut start) = twin_setup();
    start.beta = 7.0;
    let cfg = SamplerConfig {
        n_iterations: 20,
        n_warmup: 10,
        bounds: Some(BoxBounds::sampling_default(3)),
        ..Default::default()
    };
    assert!(sample(&start, &data, &spec, &cfg).is_err());
}
