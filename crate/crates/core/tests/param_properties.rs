use proptest::prelude::*;
use twinmix::params::{
    bound_transform, from_natural, to_natural, weights_from_generators, BoxBounds, NaturalParams,
    UnconstrainedParams,
};

fn unconstrained(m: usize) -> impl Strategy<Value = UnconstrainedParams> {
    (
        prop::collection::vec(-8.0..8.0f64, m),
        prop::collection::vec(-5.0..5.0f64, m),
        prop::collection::vec(-0.99..0.99f64, m),
        prop::collection::vec(-0.99..0.99f64, m),
        -10.0..10.0f64,
        prop::collection::vec(-20.0..20.0f64, m - 1),
    )
        .prop_map(|(alpha, log_sigma, rho_mz, rho_dz, beta, pre_p)| UnconstrainedParams {
            alpha,
            log_sigma,
            rho_mz,
            rho_dz,
            beta,
            pre_p,
        })
}

fn natural() -> impl Strategy<Value = NaturalParams> {
    (
        0.5..30.0f64,
        prop::collection::vec(0.05..6.0f64, 2),
        prop::collection::vec(0.1..4.0f64, 3),
        prop::collection::vec(-0.95..0.95f64, 3),
        prop::collection::vec(-0.95..0.95f64, 3),
        -5.0..5.0f64,
        prop::collection::vec(0.05..1.0f64, 3),
    )
        .prop_map(|(mu1, gaps, sigma, rho_mz, rho_dz, beta, raw_p)| {
            let total: f64 = raw_p.iter().sum();
            NaturalParams {
                mu: vec![mu1, mu1 + gaps[0], mu1 + gaps[0] + gaps[1]],
                sigma,
                rho_mz,
                rho_dz,
                beta,
                p: raw_p.iter().map(|p| p / total).collect(),
            }
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn means_are_ordered_and_weights_on_simplex(u in unconstrained(3)) {
        let n = to_natural(&u);
        prop_assert!(n.mu[0] > 0.0);
        prop_assert!(n.mu.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(n.sigma.iter().all(|&s| s > 0.0));
        prop_assert!(n.p.iter().all(|&p| p > 0.0));
        prop_assert!((n.p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn natural_round_trip(n in natural()) {
        let back = to_natural(&from_natural(&n).unwrap());
        for (a, b) in back.to_flat().iter().zip(n.to_flat()) {
            prop_assert!((a - b).abs() < 1e-10, "{} vs {}", a, b);
        }
    }

    #[test]
    fn unconstrained_round_trip(
        alpha in prop::collection::vec(-4.0..4.0f64, 3),
        pre_p in prop::collection::vec(-10.0..10.0f64, 2),
        rest in unconstrained(3),
    ) {
        // away from float saturation of exp(alpha) and the weights
        let u = UnconstrainedParams { alpha, pre_p, ..rest };
        let n = to_natural(&u);
        let back = from_natural(&n).unwrap();
        for (a, b) in back.to_flat().iter().zip(u.to_flat()) {
            prop_assert!((a - b).abs() < 1e-8 * b.abs().max(1.0), "{} vs {}", a, b);
        }
    }

    #[test]
    fn simplex_for_any_generators(t in prop::collection::vec(-700.0..700.0f64, 1..6)) {
        let w = weights_from_generators(&t);
        prop_assert_eq!(w.len(), t.len() + 1);
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bound_transform_jacobian_matches_finite_differences(
        y in prop::collection::vec(-6.0..6.0f64, 15)
    ) {
        let bounds = BoxBounds::sampling_default(3);
        let (x, log_jac) = bound_transform(&y, &bounds);
        prop_assert!(x.iter().zip(bounds.lower().iter().zip(bounds.upper()))
            .all(|(v, (l, u))| v > l && v < u));
        let h = 1e-5;
        let mut fd_log_det = 0.0;
        for i in 0..y.len() {
            let mut up = y.clone();
            let mut dn = y.clone();
            up[i] += h;
            dn[i] -= h;
            let d = (bound_transform(&up, &bounds).0[i] - bound_transform(&dn, &bounds).0[i]) / (2.0 * h);
            fd_log_det += d.abs().ln();
        }
        prop_assert!((fd_log_det - log_jac).abs() <= 1e-6 * log_jac.abs().max(1.0),
            "{} vs {}", fd_log_det, log_jac);
    }

    #[test]
    fn bound_transform_stays_in_open_box(y in prop::collection::vec(-1e6..1e6f64, 15)) {
        let bounds = BoxBounds::sampling_default(3);
        let (x, log_jac) = bound_transform(&y, &bounds);
        prop_assert!(x.iter().zip(bounds.lower().iter().zip(bounds.upper()))
            .all(|(v, (l, u))| v > l && v < u));
        prop_assert!(!log_jac.is_nan());
    }
}
