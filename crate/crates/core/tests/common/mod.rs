#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use twinmix::model::{nll, ModelSpec, TwinDataset};
use twinmix::params::{from_natural, NaturalParams, UnconstrainedParams};

/// Five-point central difference of the NLL, summed row by row so rounding
/// noise scales with per-row magnitudes instead of the total.
pub fn fd_gradient(u: &UnconstrainedParams, data: &TwinDataset, spec: &ModelSpec) -> Vec<f64> {
    let flat = u.to_flat();
    let singles: Vec<TwinDataset> = data
        .rows()
        .iter()
        .map(|r| TwinDataset::new(vec![*r]).unwrap())
        .collect();
    (0..flat.len())
        .map(|j| {
            let h = 2e-5 * flat[j].abs().max(1.0);
            let at = |d: f64| {
                let mut v = flat.clone();
                v[j] += d;
                UnconstrainedParams::from_flat(&v).unwrap()
            };
            let pts = [at(-2.0 * h), at(-h), at(h), at(2.0 * h)];
            let mut acc = 0.0;
            for single in &singles {
                let f: Vec<f64> = pts.iter().map(|p| nll(p, single, spec).unwrap().nll).collect();
                acc += (f[0] - 8.0 * f[1] + 8.0 * f[2] - f[3]) / (12.0 * h);
            }
            acc
        })
        .collect()
}

/// Random valid three-component point scattered around the reference truth.
pub fn random_point(rng: &mut ChaCha8Rng) -> UnconstrainedParams {
    let mut u = from_natural(&NaturalParams::reference_truth()).unwrap();
    for a in u.alpha.iter_mut() {
        *a += rng.random_range(-0.5..0.5);
    }
    for s in u.log_sigma.iter_mut() {
        *s += rng.random_range(-0.7..0.7);
    }
    for r in u.rho_mz.iter_mut().chain(u.rho_dz.iter_mut()) {
        *r = rng.random_range(-0.9..0.9);
    }
    u.beta = rng.random_range(0.0..4.0);
    for t in u.pre_p.iter_mut() {
        *t = rng.random_range(-2.0..2.0);
    }
    u
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `|a - b|` relative to the larger magnitude, with an absolute floor.
pub fn rel_err(a: f64, b: f64, abs_floor: f64) -> f64 {
    let d = (a - b).abs();
    if d <= abs_floor {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

/// Weight of the component centred at `+theta` in the bimodal profile.
pub const BIMODAL_WEIGHT: f64 = 0.7;

/// One-parameter mixture `w N(theta, 1) + (1 - w) N(-theta, 1)` fitted to
/// data drawn at `theta = 3`. The unequal weights give one global mode near
/// `+3` and a strictly worse local mode near `-3`.
pub fn bimodal_profile(n: usize, seed: u64) -> impl twinmix::objective::Objective {
    use rand_distr::{Distribution, StandardNormal};
    let mut r = rng(seed);
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut r);
            let centre = if r.random::<f64>() < BIMODAL_WEIGHT { 3.0 } else { -3.0 };
            centre + z
        })
        .collect();
    twinmix::objective::FnObjective::new(1, move |x: &[f64], g: &mut [f64]| {
        let t = x[0];
        let (mut f, mut d) = (0.0, 0.0);
        for &v in &data {
            let la = BIMODAL_WEIGHT.ln() - 0.5 * (v - t) * (v - t);
            let lb = (1.0 - BIMODAL_WEIGHT).ln() - 0.5 * (v + t) * (v + t);
            let mx = la.max(lb);
            let (ea, eb) = ((la - mx).exp(), (lb - mx).exp());
            f -= mx + (ea + eb).ln();
            // responsibilities weight the two score terms
            d -= (ea * (v - t) - eb * (v + t)) / (ea + eb);
        }
        g[0] = d;
        f
    })
}

/// Dense grid minimum of a 1-D objective over `[lo, hi]`.
pub fn grid_minimum<O: twinmix::objective::Objective>(obj: &O, lo: f64, hi: f64, n: usize) -> (f64, f64) {
    (0..n)
        .map(|i| {
            let x = lo + (hi - lo) * i as f64 / (n - 1) as f64;
            (x, obj.value(&[x]))
        })
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

/// Asymptotic Kolmogorov p-value with Stephens' small-sample correction.
pub fn ks_p_value(d: f64, n: usize) -> f64 {
    let sqrt_n = (n as f64).sqrt();
    let lambda = (sqrt_n + 0.12 + 0.11 / sqrt_n) * d;
    let mut sum = 0.0;
    for j in 1..200 {
        let j = j as f64;
        let term = 2.0 * (-1f64).powf(j - 1.0) * (-2.0 * j * j * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

pub fn ks_statistic(draws: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = draws.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// Bound on the rounding error of [`fd_gradient`] per coordinate: the
/// stencil weights (1 + 8 + 8 + 1) / 12h times machine epsilon times the
/// summed row magnitudes. Differences below it are not resolvable.
pub fn fd_rounding_bound(u: &UnconstrainedParams, data: &TwinDataset, spec: &ModelSpec) -> Vec<f64> {
    let total: f64 = data
        .rows()
        .iter()
        .map(|r| nll(u, &TwinDataset::new(vec![*r]).unwrap(), spec).unwrap().nll.abs())
        .sum();
    u.to_flat()
        .iter()
        .map(|x| {
            let h = 2e-5 * x.abs().max(1.0);
            18.0 * f64::EPSILON * total / (12.0 * h)
        })
        .collect()
}
