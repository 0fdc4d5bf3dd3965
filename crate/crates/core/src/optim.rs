//! Box-constrained limited-memory quasi-Newton minimization.
//!
//! Directions come from the L-BFGS two-loop recursion restricted to the
//! coordinates not held at an active bound. Steps that stay inside the box
//! use a strong-Wolfe line search; otherwise, or when that search fails, a
//! backtracking search along the projected path is used. Every evaluated
//! point lies in the closed box and accepted iterates strictly decrease the
//! objective.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, TwinDataset, TwinModel};
use crate::objective::{Masked, Objective};
use crate::params::{
    from_natural, natural_jacobian, to_natural, BoxBounds, FixedMask, NaturalParams, UnconstrainedParams,
};

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_BRACKET: usize = 30;
const MAX_ZOOM: usize = 40;
const MAX_BACKTRACK: usize = 50;
const START_BACKOFF: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimConfig {
    pub max_iterations: usize,
    /// Sup-norm threshold on the projected gradient.
    pub gradient_tolerance: f64,
    /// Sup-norm threshold on the accepted step.
    pub step_tolerance: f64,
    /// Number of stored curvature pairs.
    pub history_size: usize,
    /// Box on the unconstrained scale; `None` picks a default for the caller.
    pub bounds: Option<BoxBounds>,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            max_iterations: 500,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-10,
            history_size: 10,
            bounds: None,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::domain("max_iterations must be at least 1"));
        }
        if !(self.gradient_tolerance > 0.0) || !(self.step_tolerance > 0.0) {
            return Err(Error::domain("tolerances must be positive"));
        }
        if self.history_size == 0 {
            return Err(Error::domain("history_size must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Termination {
    GradientTol,
    StepTol,
    MaxIter,
    InvalidStart,
    LineSearchFail,
}

impl Termination {
    pub fn is_converged(self) -> bool {
        matches!(self, Termination::GradientTol | Termination::StepTol)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Termination::GradientTol => "GradientTol",
            Termination::StepTol => "StepTol",
            Termination::MaxIter => "MaxIter",
            Termination::InvalidStart => "InvalidStart",
            Termination::LineSearchFail => "LineSearchFail",
        }
    }
}

/// Outcome of a minimization over a flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Objective after each accepted iterate, starting with the (recovered) start.
    pub trace: Vec<f64>,
}

impl Minimum {
    pub fn converged(&self) -> bool {
        self.termination.is_converged()
    }
}

struct Counted<'a, O: ?Sized> {
    inner: &'a O,
    evals: usize,
}

impl<O: Objective + ?Sized> Counted<'_, O> {
    fn eval(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
        self.evals += 1;
        let f = self.inner.value_grad(x, g);
        if f.is_nan() || g.iter().any(|v| !v.is_finite()) {
            g.iter_mut().for_each(|v| *v = 0.0);
            f64::INFINITY
        } else {
            f
        }
    }
}

/// Sup-norm of `P(x - g) - x`.
fn projected_gradient_norm(x: &[f64], g: &[f64], b: &BoxBounds) -> f64 {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&xi, &gi))| ((xi - gi).clamp(b.lower()[i], b.upper()[i]) - xi).abs())
        .fold(0.0, f64::max)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dot_on(a: &[f64], b: &[f64], free: &[bool]) -> f64 {
    a.iter()
        .zip(b)
        .zip(free)
        .filter(|(_, f)| **f)
        .map(|((x, y), _)| x * y)
        .sum()
}

/// `-H g` on the free coordinates via the two-loop recursion.
fn lbfgs_direction(g: &[f64], free: &[bool], history: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Vec<f64> {
    let mut q: Vec<f64> = g
        .iter()
        .zip(free)
        .map(|(&gi, &f)| if f { gi } else { 0.0 })
        .collect();
    let pairs: Vec<(&Vec<f64>, &Vec<f64>, f64)> = history
        .iter()
        .filter_map(|(s, y)| {
            let sy = dot_on(s, y, free);
            (sy > 0.0).then_some((s, y, 1.0 / sy))
        })
        .collect();
    let mut alphas = vec![0.0; pairs.len()];
    for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
        let a = rho * dot_on(s, &q, free);
        alphas[k] = a;
        for i in 0..q.len() {
            if free[i] {
                q[i] -= a * y[i];
            }
        }
    }
    let gamma = pairs
        .last()
        .map(|(_, y, rho)| 1.0 / (rho * dot_on(y, y, free)))
        .unwrap_or(1.0);
    q.iter_mut().for_each(|v| *v *= gamma);
    for (k, (s, y, rho)) in pairs.iter().enumerate() {
        let b = rho * dot_on(y, &q, free);
        for i in 0..q.len() {
            if free[i] {
                q[i] += (alphas[k] - b) * s[i];
            }
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Largest step along `d` that stays in the box.
fn max_feasible_step(x: &[f64], d: &[f64], b: &BoxBounds) -> f64 {
    let mut a = f64::INFINITY;
    for i in 0..x.len() {
        if d[i] > 0.0 && b.upper()[i].is_finite() {
            a = a.min((b.upper()[i] - x[i]) / d[i]);
        } else if d[i] < 0.0 && b.lower()[i].is_finite() {
            a = a.min((b.lower()[i] - x[i]) / d[i]);
        }
    }
    a.max(0.0)
}

struct Point {
    x: Vec<f64>,
    f: f64,
    g: Vec<f64>,
}

struct LineSearch<'a, 'o, O: ?Sized> {
    obj: &'a mut Counted<'o, O>,
    bounds: &'a BoxBounds,
    x: &'a [f64],
    f0: f64,
    g0: &'a [f64],
    d: &'a [f64],
}

impl<O: Objective + ?Sized> LineSearch<'_, '_, O> {
    fn point(&mut self, alpha: f64) -> Point {
        let mut x: Vec<f64> = self
            .x
            .iter()
            .zip(self.d)
            .map(|(xi, di)| xi + alpha * di)
            .collect();
        self.bounds.project(&mut x);
        let mut g = vec![0.0; x.len()];
        let f = self.obj.eval(&x, &mut g);
        Point { x, f, g }
    }

    /// Strong-Wolfe search on `[0, alpha_max]` (bracketing then zoom).
    fn wolfe(&mut self, alpha_init: f64, alpha_max: f64) -> Option<Point> {
        let dphi0 = dot(self.g0, self.d);
        let armijo = |a: f64, f: f64, f0: f64| f <= f0 + C1 * a * dphi0;
        let mut a_prev = 0.0;
        let mut f_prev = self.f0;
        let mut dphi_prev = dphi0;
        let mut a = alpha_init.min(alpha_max);
        for i in 0..MAX_BRACKET {
            let p = self.point(a);
            let dphi = dot(&p.g, self.d);
            if !armijo(a, p.f, self.f0) || (i > 0 && p.f >= f_prev) {
                return self.zoom(a_prev, f_prev, dphi_prev, a, p.f);
            }
            if dphi.abs() <= -C2 * dphi0 {
                return Some(p);
            }
            if dphi >= 0.0 {
                return self.zoom(a, p.f, dphi, a_prev, f_prev);
            }
            if a >= alpha_max {
                // sufficient decrease holds at the box edge
                return Some(p);
            }
            a_prev = a;
            f_prev = p.f;
            dphi_prev = dphi;
            a = (2.0 * a).min(alpha_max);
        }
        None
    }

    fn zoom(
        &mut self,
        mut lo: f64,
        mut f_lo: f64,
        mut dphi_lo: f64,
        mut hi: f64,
        mut f_hi: f64,
    ) -> Option<Point> {
        let dphi0 = dot(self.g0, self.d);
        let mut best: Option<Point> = None;
        for _ in 0..MAX_ZOOM {
            let (a_min, a_max) = if lo < hi { (lo, hi) } else { (hi, lo) };
            let width = a_max - a_min;
            if width <= 1e-16 * a_max.max(1.0) {
                break;
            }
            // safeguarded quadratic interpolation from (lo, f_lo, dphi_lo) and (hi, f_hi)
            let mut a = f64::NAN;
            if f_hi.is_finite() {
                let dh = hi - lo;
                let denom = 2.0 * (f_hi - f_lo - dphi_lo * dh);
                if denom.abs() > 0.0 {
                    a = lo - dphi_lo * dh * dh / denom;
                }
            }
            if !(a > a_min + 0.1 * width && a < a_max - 0.1 * width) {
                a = 0.5 * (lo + hi);
            }
            let p = self.point(a);
            let dphi = dot(&p.g, self.d);
            if p.f > self.f0 + C1 * a * dphi0 || p.f >= f_lo {
                hi = a;
                f_hi = p.f;
            } else {
                if dphi.abs() <= -C2 * dphi0 {
                    return Some(p);
                }
                if dphi * (hi - lo) >= 0.0 {
                    hi = lo;
                    f_hi = f_lo;
                }
                lo = a;
                f_lo = p.f;
                dphi_lo = dphi;
                best = Some(p);
            }
        }
        // fall back to the best point with sufficient decrease, if any
        best.filter(|p| p.f < self.f0)
    }

    /// Armijo backtracking along the projected path `P(x + a d)`.
    fn projected_backtracking(&mut self, alpha_init: f64) -> Option<Point> {
        let mut a = alpha_init;
        for _ in 0..MAX_BACKTRACK {
            let p = self.point(a);
            let moved: Vec<f64> = p.x.iter().zip(self.x).map(|(a, b)| a - b).collect();
            let decrease = dot(self.g0, &moved);
            if p.f.is_finite() && decrease < 0.0 && p.f <= self.f0 + C1 * decrease {
                return Some(p);
            }
            a *= 0.5;
        }
        None
    }
}

/// Minimizes `obj` over the box starting from `x0`.
///
/// A start with infinite objective is pulled toward the box center by
/// successive halvings; if none of those points is valid the result carries
/// [`Termination::InvalidStart`].
pub fn minimize_objective<O: Objective + ?Sized>(
    obj: &O,
    x0: &[f64],
    bounds: &BoxBounds,
    cfg: &OptimConfig,
) -> Result<Minimum> {
    cfg.validate()?;
    let n = obj.dim();
    if x0.len() != n || bounds.dim() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: if x0.len() != n { x0.len() } else { bounds.dim() },
        });
    }
    if x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("start point must be finite"));
    }
    let mut counted = Counted {
        inner: obj,
        evals: 0,
    };
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut g = vec![0.0; n];
    let mut f = counted.eval(&x, &mut g);
    if !f.is_finite() {
        let center = bounds.center();
        for _ in 0..START_BACKOFF {
            for (xi, ci) in x.iter_mut().zip(&center) {
                *xi = ci + 0.5 * (*xi - ci);
            }
            f = counted.eval(&x, &mut g);
            if f.is_finite() {
                break;
            }
        }
        if !f.is_finite() {
            return Ok(Minimum {
                x,
                value: f64::INFINITY,
                iterations: 0,
                evaluations: counted.evals,
                termination: Termination::InvalidStart,
                trace: Vec::new(),
            });
        }
    }

    let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::with_capacity(cfg.history_size);
    let mut trace = vec![f];
    let mut termination = Termination::MaxIter;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        if projected_gradient_norm(&x, &g, bounds) <= cfg.gradient_tolerance {
            termination = Termination::GradientTol;
            break;
        }
        iterations += 1;
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let at_lower = x[i] <= bounds.lower()[i] && g[i] > 0.0;
                let at_upper = x[i] >= bounds.upper()[i] && g[i] < 0.0;
                !(at_lower || at_upper)
            })
            .collect();
        let mut d = lbfgs_direction(&g, &free, &history);
        let mut gd = dot(&g, &d);
        if !(gd < 0.0) || d.iter().any(|v| !v.is_finite()) {
            history.clear();
            d = g
                .iter()
                .zip(&free)
                .map(|(&gi, &fr)| if fr { -gi } else { 0.0 })
                .collect();
            gd = dot(&g, &d);
        }
        let alpha_init = if history.is_empty() {
            let dn = d.iter().fold(0.0f64, |a, v| a.max(v.abs()));
            (1.0 / dn).min(1.0)
        } else {
            1.0
        };
        let alpha_max = max_feasible_step(&x, &d, bounds);
        let mut ls = LineSearch {
            obj: &mut counted,
            bounds,
            x: &x,
            f0: f,
            g0: &g,
            d: &d,
        };
        let mut accepted = None;
        if alpha_max >= alpha_init {
            accepted = ls.wolfe(alpha_init, alpha_max);
        }
        if accepted.is_none() {
            accepted = ls.projected_backtracking(alpha_init);
        }
        let Some(next) = accepted else {
            // no measurable decrease left at this floating-point resolution
            termination = if gd.abs() <= 1e-12 * f.abs().max(1.0) {
                Termination::StepTol
            } else {
                Termination::LineSearchFail
            };
            break;
        };

        let s: Vec<f64> = next.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let step = s.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let sy = dot(&s, &y);
        if sy > 1e-10 * dot(&y, &y).max(f64::MIN_POSITIVE) {
            if history.len() == cfg.history_size {
                history.pop_front();
            }
            history.push_back((s, y));
        }
        x = next.x;
        f = next.f;
        g = next.g;
        trace.push(f);
        if step <= cfg.step_tolerance {
            termination = Termination::StepTol;
            break;
        }
    }
    if termination == Termination::MaxIter
        && projected_gradient_norm(&x, &g, bounds) <= cfg.gradient_tolerance
    {
        termination = Termination::GradientTol;
    }
    Ok(Minimum {
        x,
        value: f,
        iterations,
        evaluations: counted.evals,
        termination,
        trace,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimResult {
    pub argmin: UnconstrainedParams,
    pub nll: f64,
    pub converged: bool,
    pub iterations: usize,
    pub termination: Termination,
}

#[derive(Serialize, Deserialize)]
struct OptimResultRepr {
    nll: Option<f64>,
    converged: bool,
    termination: Termination,
    iterations: usize,
    params_natural: NaturalParams,
    params_unconstrained: UnconstrainedParams,
}

impl Serialize for OptimResult {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        OptimResultRepr {
            nll: self.nll.is_finite().then_some(self.nll),
            converged: self.converged,
            termination: self.termination,
            iterations: self.iterations,
            params_natural: to_natural(&self.argmin),
            params_unconstrained: self.argmin.clone(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for OptimResult {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let r = OptimResultRepr::deserialize(d)?;
        Ok(OptimResult {
            argmin: r.params_unconstrained,
            nll: r.nll.unwrap_or(f64::INFINITY),
            converged: r.converged,
            iterations: r.iterations,
            termination: r.termination,
        })
    }
}

/// Minimizes the twin-model NLL. With a mask, only the free coordinates move
/// and the fixed ones keep their mask values exactly.
pub fn minimize(
    start: &UnconstrainedParams,
    data: &TwinDataset,
    spec: &ModelSpec,
    cfg: &OptimConfig,
    mask: Option<&FixedMask>,
) -> Result<OptimResult> {
    start.validate()?;
    if start.n_components() != spec.n_components {
        return Err(Error::LengthMismatch {
            expected: spec.dim(),
            got: start.dim(),
        });
    }
    let model = TwinModel::new(data, *spec)?;
    let bounds = cfg
        .bounds
        .clone()
        .unwrap_or_else(|| BoxBounds::optimizer_default(spec.n_components));
    if bounds.dim() != spec.dim() {
        return Err(Error::LengthMismatch {
            expected: spec.dim(),
            got: bounds.dim(),
        });
    }
    let flat = start.to_flat();
    let (min, full) = match mask {
        Some(mask) => {
            if mask.dim() != spec.dim() {
                return Err(Error::LengthMismatch {
                    expected: spec.dim(),
                    got: mask.dim(),
                });
            }
            let free_idx = mask.free_indices();
            let sub = Masked::new(&model, mask);
            let min = minimize_objective(&sub, &mask.apply(&flat), &bounds.restrict(&free_idx), cfg)?;
            let full = mask.embed(&min.x)?;
            (min, full)
        }
        None => {
            let min = minimize_objective(&model, &flat, &bounds, cfg)?;
            let full = min.x.clone();
            (min, full)
        }
    };
    Ok(OptimResult {
        argmin: UnconstrainedParams::from_flat(&full)?,
        nll: min.value,
        converged: min.converged(),
        iterations: min.iterations,
        termination: min.termination,
    })
}

/// Start point built from sample moments: the sex offset from group means,
/// component means at evenly spaced quantiles of the offset-corrected values,
/// a shared spread, pooled within-pair correlations and equal weights.
pub fn moment_start(data: &TwinDataset, n_components: usize) -> Result<UnconstrainedParams> {
    let spec = ModelSpec::new(n_components)?;
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let m = spec.n_components;
    let group_mean = |male: bool| {
        let v: Vec<f64> = data
            .rows()
            .iter()
            .filter(|r| (r.sex.covariate() > 0.0) == male)
            .flat_map(|r| [r.x1, r.x2])
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let beta = match (group_mean(true), group_mean(false)) {
        (Some(a), Some(b)) => a - b,
        _ => 0.0,
    };
    let adjusted: Vec<(f64, f64, bool)> = data
        .rows()
        .iter()
        .map(|r| {
            let s = r.sex.covariate() * beta;
            (r.x1 - s, r.x2 - s, r.zygosity == crate::model::Zygosity::Mz)
        })
        .collect();
    let mut pooled: Vec<f64> = adjusted.iter().flat_map(|&(a, b, _)| [a, b]).collect();
    pooled.sort_by(f64::total_cmp);
    let n = pooled.len() as f64;
    let mean = pooled.iter().sum::<f64>() / n;
    let sd = (pooled.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0))
        .sqrt()
        .max(1e-3);
    let quantile = |q: f64| pooled[((q * (n - 1.0)).round() as usize).min(pooled.len() - 1)];
    let mut mu = Vec::with_capacity(m);
    for k in 0..m {
        let q = quantile((k as f64 + 0.5) / m as f64);
        let v = match mu.last() {
            Some(&prev) => q.max(prev + 0.1 * sd),
            None => q.max(1e-3),
        };
        mu.push(v);
    }
    let corr = |mz: bool| {
        let pairs: Vec<(f64, f64)> = adjusted
            .iter()
            .filter(|r| r.2 == mz)
            .map(|&(a, b, _)| (a, b))
            .collect();
        if pairs.len() < 3 {
            return 0.0;
        }
        let k = pairs.len() as f64;
        let ma = pairs.iter().map(|p| p.0).sum::<f64>() / k;
        let mb = pairs.iter().map(|p| p.1).sum::<f64>() / k;
        let cov: f64 = pairs.iter().map(|p| (p.0 - ma) * (p.1 - mb)).sum();
        let va: f64 = pairs.iter().map(|p| (p.0 - ma).powi(2)).sum();
        let vb: f64 = pairs.iter().map(|p| (p.1 - mb).powi(2)).sum();
        let r = cov / (va * vb).sqrt();
        if r.is_finite() {
            r.clamp(-0.95, 0.95)
        } else {
            0.0
        }
    };
    let natural = NaturalParams {
        mu,
        sigma: vec![sd / (m as f64).sqrt(); m],
        rho_mz: vec![corr(true); m],
        rho_dz: vec![corr(false); m],
        beta,
        p: vec![1.0 / m as f64; m],
    };
    from_natural(&natural)
}

/// Delta-method standard errors at a minimum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardErrors {
    /// Flat unconstrained order.
    pub unconstrained: Vec<f64>,
    /// Natural scale, including the reference weight.
    pub natural: NaturalParams,
}

/// Inverts a symmetric Hessian, failing unless it is positive definite.
pub fn covariance_from_hessian(hessian: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let n = hessian.len();
    let h = DMatrix::from_fn(n, n, |i, j| 0.5 * (hessian[i][j] + hessian[j][i]));
    if h.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularHessian);
    }
    let chol = h.cholesky().ok_or(Error::SingularHessian)?;
    let l = chol.l();
    let min_pivot = (0..n).map(|i| l[(i, i)]).fold(f64::INFINITY, f64::min);
    let max_pivot = (0..n).map(|i| l[(i, i)]).fold(0.0, f64::max);
    // pivots are square roots of curvature; reject numerically flat directions
    if !(min_pivot > 1e-7 * max_pivot) {
        return Err(Error::SingularHessian);
    }
    let inv = chol.inverse();
    Ok((0..n).map(|i| (0..n).map(|j| inv[(i, j)]).collect()).collect())
}

/// Central-difference Hessian of an objective from its analytic gradient.
pub fn finite_difference_hessian<O: Objective + ?Sized>(obj: &O, x: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut h = vec![vec![0.0; n]; n];
    let mut gp = vec![0.0; n];
    let mut gm = vec![0.0; n];
    for j in 0..n {
        let step = 1e-5 * x[j].abs().max(1.0);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[j] += step;
        xm[j] -= step;
        obj.value_grad(&xp, &mut gp);
        obj.value_grad(&xm, &mut gm);
        for i in 0..n {
            h[i][j] = (gp[i] - gm[i]) / (2.0 * step);
        }
    }
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (h[i][j] + h[j][i]);
            h[i][j] = v;
            h[j][i] = v;
        }
    }
    h
}

/// Standard errors from the inverse finite-difference Hessian of the NLL at
/// `at`, propagated to the natural scale through the Jacobian of the
/// parameter map.
pub fn standard_errors(
    at: &UnconstrainedParams,
    data: &TwinDataset,
    spec: &ModelSpec,
) -> Result<StandardErrors> {
    at.validate()?;
    let model = TwinModel::new(data, *spec)?;
    let x = at.to_flat();
    if !model.value(&x).is_finite() {
        return Err(Error::domain("standard errors requested at an invalid point"));
    }
    let cov = covariance_from_hessian(&finite_difference_hessian(&model, &x))?;
    let jac = natural_jacobian(at);
    let n = x.len();
    let natural: Vec<f64> = jac
        .iter()
        .map(|row| {
            let mut v = 0.0;
            for i in 0..n {
                for j in 0..n {
                    v += row[i] * cov[i][j] * row[j];
                }
            }
            v.max(0.0).sqrt()
        })
        .collect();
    Ok(StandardErrors {
        unconstrained: (0..n).map(|i| cov[i][i].max(0.0).sqrt()).collect(),
        natural: NaturalParams::from_flat(&natural)?,
    })
}
