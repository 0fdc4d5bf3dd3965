use proptest::prelude::*;
use rand_distr::{Distribution, StandardNormal};
use twinmix::diagnostics::{aic_bic, geweke, global_quantities};
use twinmix::params::NaturalParams;

mod common;

fn natural() -> impl Strategy<Value = NaturalParams> {
    (
        prop::collection::vec(0.01f64..10.0, 3),
        prop::collection::vec(0.1f64..5.0, 3),
        prop::collection::vec(-0.95f64..0.95, 3),
        prop::collection::vec(-0.95f64..0.95, 3),
        -5.0f64..5.0,
        prop::collection::vec(0.05f64..1.0, 3),
    )
        .prop_map(|(gaps, sigma, rho_mz, rho_dz, beta, w)| {
            let mut mu = Vec::new();
            let mut acc = 1.0;
            for g in gaps {
                acc += g;
                mu.push(acc);
            }
            let s: f64 = w.iter().sum();
            NaturalParams {
                mu,
                sigma,
                rho_mz,
                rho_dz,
                beta,
                p: w.iter().map(|v| v / s).collect(),
            }
        })
}

fn normal_chain(n: usize, seed: u64) -> Vec<f64> {
    let mut r = common::rng(seed);
    (0..n).map(|_| StandardNormal.sample(&mut r)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn global_moments_are_bounded(n in natural()) {
        let g = global_quantities(&n).unwrap();
        let lo = n.mu.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = n.mu.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(g.mu_g >= lo - 1e-12 && g.mu_g <= hi + 1e-12);
        // total variance is at least the weighted within-component variance
        let within: f64 = n.p.iter().zip(&n.sigma).map(|(p, s)| p * s * s).sum();
        prop_assert!(g.sigma_g * g.sigma_g >= within * (1.0 - 1e-12));
        prop_assert!(g.rho_mz_g > -1.0 && g.rho_mz_g < 1.0);
        prop_assert!(g.rho_dz_g > -1.0 && g.rho_dz_g < 1.0);
    }

    #[test]
    fn beta_does_not_enter_global_moments(n in natural(), shift in -3.0f64..3.0) {
        let mut m = n.clone();
        m.beta += shift;
        prop_assert_eq!(global_quantities(&n).unwrap(), global_quantities(&m).unwrap());
    }

    #[test]
    fn equal_correlations_pass_through(n in natural(), r in -0.9f64..0.9) {
        // with identical components the mixture is that component
        let one = NaturalParams {
            mu: vec![n.mu[0]; 3],
            sigma: vec![n.sigma[0]; 3],
            rho_mz: vec![r; 3],
            rho_dz: vec![r; 3],
            ..n
        };
        let g = global_quantities(&one).unwrap();
        prop_assert!((g.sigma_g - one.sigma[0]).abs() < 1e-9);
        prop_assert!((g.rho_mz_g - r).abs() < 1e-9);
    }

    #[test]
    fn information_criteria_differ_by_penalty(nll in 0.0f64..1e5, k in 1usize..40, n in 2usize..5000) {
        let (aic, bic) = aic_bic(nll, k, n);
        prop_assert!((aic - 2.0 * nll - 2.0 * k as f64).abs() < 1e-9 * aic.max(1.0));
        prop_assert!(((bic - aic) - k as f64 * ((n as f64).ln() - 2.0)).abs() < 1e-9 * bic.max(1.0));
    }

    #[test]
    fn geweke_is_affine_invariant(seed in 0u64..1000, a in 0.01f64..100.0, b in -50.0f64..50.0) {
        let x = normal_chain(400, seed);
        let y: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let zx = geweke(&x, 0.1, 0.5).unwrap();
        let zy = geweke(&y, 0.1, 0.5).unwrap();
        prop_assert!((zx - zy).abs() < 1e-8 * zx.abs().max(1.0), "{} vs {}", zx, zy);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        prop_assert!((geweke(&neg, 0.1, 0.5).unwrap() + zx).abs() < 1e-10 * zx.abs().max(1.0));
    }
}

#[test]
fn geweke_flags_a_shifted_tail() {
    let mut x = normal_chain(2000, 9);
    for v in &mut x[1000..] {
        *v += 1.0;
    }
    assert!(geweke(&x, 0.1, 0.5).unwrap().abs() > 5.0);
}

#[test]
fn geweke_null_fraction_near_nominal() {
    let zs: Vec<f64> = (0..200)
        .map(|s| geweke(&normal_chain(2000, 10_000 + s), 0.1, 0.5).unwrap())
        .collect();
    let frac = zs.iter().filter(|z| z.abs() <= 1.28).count() as f64 / zs.len() as f64;
    assert!((frac - 0.8).abs() < 0.08, "{frac}");
}
