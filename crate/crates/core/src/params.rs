//! Parameter coordinates for the twin-pair mixture.
//!
//! Two coordinate systems exist. [`UnconstrainedParams`] is what the sampler
//! and optimizer move through; [`NaturalParams`] is the interpretable mixture
//! (ordered means, standard deviations, correlations, weights). For `m`
//! components the flat unconstrained vector has `5m` entries in the order
//!
//! ```text
//! alpha[0..m], log_sigma[0..m], rho_mz[0..m], rho_dz[0..m], beta, pre_p[0..m-1]
//! ```
//!
//! and the flat natural vector has `5m + 1` entries
//! (`mu, sigma, rho_mz, rho_dz, beta, p`).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of flat unconstrained coordinates for `m` components.
pub fn flat_len(n_components: usize) -> usize {
    5 * n_components
}

/// Number of flat natural coordinates for `m` components (`p` has all `m` weights).
pub fn natural_len(n_components: usize) -> usize {
    5 * n_components + 1
}

/// Components implied by a flat unconstrained length, if it is a valid one.
pub fn components_for_len(len: usize) -> Option<usize> {
    (len > 0 && len.is_multiple_of(5)).then_some(len / 5)
}

/// A named group of coordinates, used for masks and bounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamBlock {
    Alpha,
    LogSigma,
    RhoMz,
    RhoDz,
    Beta,
    PreP,
}

impl ParamBlock {
    pub const ALL: [ParamBlock; 6] = [
        ParamBlock::Alpha,
        ParamBlock::LogSigma,
        ParamBlock::RhoMz,
        ParamBlock::RhoDz,
        ParamBlock::Beta,
        ParamBlock::PreP,
    ];

    /// Flat indices covered by this block.
    pub fn indices(self, n_components: usize) -> std::ops::Range<usize> {
        let m = n_components;
        match self {
            ParamBlock::Alpha => 0..m,
            ParamBlock::LogSigma => m..2 * m,
            ParamBlock::RhoMz => 2 * m..3 * m,
            ParamBlock::RhoDz => 3 * m..4 * m,
            ParamBlock::Beta => 4 * m..4 * m + 1,
            ParamBlock::PreP => 4 * m + 1..5 * m,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ParamBlock::Alpha => "alpha",
            ParamBlock::LogSigma => "log_sigma",
            ParamBlock::RhoMz => "rho_mz",
            ParamBlock::RhoDz => "rho_dz",
            ParamBlock::Beta => "beta",
            ParamBlock::PreP => "pre_p",
        }
    }

    pub fn parse(s: &str) -> Option<ParamBlock> {
        let s = s.trim().to_ascii_lowercase().replace('-', "_");
        match s.as_str() {
            "alpha" | "mu" | "mean" | "means" => Some(ParamBlock::Alpha),
            "log_sigma" | "logsigma" | "sigma" => Some(ParamBlock::LogSigma),
            "rho_mz" | "rhomz" => Some(ParamBlock::RhoMz),
            "rho_dz" | "rhodz" => Some(ParamBlock::RhoDz),
            "beta" => Some(ParamBlock::Beta),
            "pre_p" | "prep" | "p" | "weights" => Some(ParamBlock::PreP),
            _ => None,
        }
    }
}

/// Column names of the flat unconstrained vector.
pub fn unconstrained_names(n_components: usize) -> Vec<String> {
    let m = n_components;
    let mut names = Vec::with_capacity(flat_len(m));
    for prefix in ["alpha", "log_sigma", "rho_mz", "rho_dz"] {
        names.extend((1..=m).map(|k| format!("{prefix}{k}")));
    }
    names.push("beta".to_string());
    names.extend((1..m).map(|k| format!("pre_p{k}")));
    names
}

/// Column names of the flat natural vector.
pub fn natural_names(n_components: usize) -> Vec<String> {
    let m = n_components;
    let mut names = Vec::with_capacity(natural_len(m));
    for prefix in ["mu", "sigma", "rho_mz", "rho_dz"] {
        names.extend((1..=m).map(|k| format!("{prefix}{k}")));
    }
    names.push("beta".to_string());
    names.extend((1..=m).map(|k| format!("p{k}")));
    names
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnconstrainedParams {
    /// Ordered-mean generators: `mu_1 = exp(alpha_1)`, `mu_k = mu_{k-1} + exp(alpha_k)`.
    pub alpha: Vec<f64>,
    pub log_sigma: Vec<f64>,
    /// Correlations on their natural scale.
    pub rho_mz: Vec<f64>,
    pub rho_dz: Vec<f64>,
    /// Mean offset for male pairs, in trait units.
    pub beta: f64,
    /// Weight generators; the last component is the reference with generator 0.
    pub pre_p: Vec<f64>,
}

impl UnconstrainedParams {
    pub fn n_components(&self) -> usize {
        self.alpha.len()
    }

    pub fn dim(&self) -> usize {
        flat_len(self.n_components())
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.alpha.len();
        if m == 0 {
            return Err(Error::domain("at least one component is required"));
        }
        for (name, len, want) in [
            ("log_sigma", self.log_sigma.len(), m),
            ("rho_mz", self.rho_mz.len(), m),
            ("rho_dz", self.rho_dz.len(), m),
            ("pre_p", self.pre_p.len(), m - 1),
        ] {
            if len != want {
                return Err(Error::domain(format!(
                    "{name} has {len} entries, expected {want} for {m} components"
                )));
            }
        }
        if self.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("unconstrained parameters must be finite"));
        }
        Ok(())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.dim());
        out.extend_from_slice(&self.alpha);
        out.extend_from_slice(&self.log_sigma);
        out.extend_from_slice(&self.rho_mz);
        out.extend_from_slice(&self.rho_dz);
        out.push(self.beta);
        out.extend_from_slice(&self.pre_p);
        out
    }

    /// Rebuilds from a flat vector; the component count is inferred from the length.
    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        let m = components_for_len(flat.len()).ok_or_else(|| {
            Error::domain(format!(
                "flat parameter length {} is not a positive multiple of 5",
                flat.len()
            ))
        })?;
        let block = |b: ParamBlock| flat[b.indices(m)].to_vec();
        Ok(UnconstrainedParams {
            alpha: block(ParamBlock::Alpha),
            log_sigma: block(ParamBlock::LogSigma),
            rho_mz: block(ParamBlock::RhoMz),
            rho_dz: block(ParamBlock::RhoDz),
            beta: flat[4 * m],
            pre_p: block(ParamBlock::PreP),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaturalParams {
    /// Component means at the female baseline.
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    pub rho_mz: Vec<f64>,
    pub rho_dz: Vec<f64>,
    pub beta: f64,
    /// Mixture weights, summing to one.
    pub p: Vec<f64>,
}

impl NaturalParams {
    /// Generating values of the reference three-component twin simulation.
    pub fn reference_truth() -> Self {
        NaturalParams {
            mu: vec![21.0, 23.0, 28.0],
            sigma: vec![1.0, 1.0, 1.0],
            rho_mz: vec![0.7, 0.5, 0.3],
            rho_dz: vec![0.4, 0.3, -0.2],
            beta: 2.0,
            p: vec![0.6, 0.3, 0.1],
        }
    }

    pub fn n_components(&self) -> usize {
        self.mu.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(natural_len(self.n_components()));
        out.extend_from_slice(&self.mu);
        out.extend_from_slice(&self.sigma);
        out.extend_from_slice(&self.rho_mz);
        out.extend_from_slice(&self.rho_dz);
        out.push(self.beta);
        out.extend_from_slice(&self.p);
        out
    }

    pub fn from_flat(flat: &[f64]) -> Result<Self> {
        if flat.len() < 6 || !(flat.len() - 1).is_multiple_of(5) {
            return Err(Error::domain(format!(
                "flat natural length {} is not 5m + 1",
                flat.len()
            )));
        }
        let m = (flat.len() - 1) / 5;
        Ok(NaturalParams {
            mu: flat[0..m].to_vec(),
            sigma: flat[m..2 * m].to_vec(),
            rho_mz: flat[2 * m..3 * m].to_vec(),
            rho_dz: flat[3 * m..4 * m].to_vec(),
            beta: flat[4 * m],
            p: flat[4 * m + 1..].to_vec(),
        })
    }

    /// Checks the mixture invariants. `strict_order` additionally requires
    /// strictly increasing means, which the inverse map needs.
    pub fn validate(&self, strict_order: bool) -> Result<()> {
        let m = self.mu.len();
        if m == 0 {
            return Err(Error::domain("at least one component is required"));
        }
        for (name, len) in [
            ("sigma", self.sigma.len()),
            ("rho_mz", self.rho_mz.len()),
            ("rho_dz", self.rho_dz.len()),
            ("p", self.p.len()),
        ] {
            if len != m {
                return Err(Error::domain(format!(
                    "{name} has {len} entries, expected {m}"
                )));
            }
        }
        if self.to_flat().iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("natural parameters must be finite"));
        }
        if self.mu[0] <= 0.0 {
            return Err(Error::domain("mu_1 must be positive"));
        }
        for w in self.mu.windows(2) {
            if w[1] < w[0] || (strict_order && w[1] == w[0]) {
                return Err(Error::domain("means must be increasing"));
            }
        }
        if self.sigma.iter().any(|&s| s <= 0.0) {
            return Err(Error::domain("sigma must be positive"));
        }
        if self
            .rho_mz
            .iter()
            .chain(&self.rho_dz)
            .any(|r| r.abs() >= 1.0)
        {
            return Err(Error::domain("correlations must lie in (-1, 1)"));
        }
        if self.p.iter().any(|&p| p <= 0.0) {
            return Err(Error::domain("weights must be positive"));
        }
        let total: f64 = self.p.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::domain(format!("weights sum to {total}, not 1")));
        }
        Ok(())
    }
}

/// Softmax with the last component as reference (generator fixed at 0).
pub fn weights_from_generators(pre_p: &[f64]) -> Vec<f64> {
    let max = pre_p.iter().copied().fold(0.0_f64, f64::max);
    let mut w: Vec<f64> = pre_p.iter().map(|t| (t - max).exp()).collect();
    w.push((-max).exp());
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Maps unconstrained coordinates to the interpretable mixture.
///
/// Correlations pass through unchanged; values outside (-1, 1) are left for
/// the likelihood to reject.
pub fn to_natural(u: &UnconstrainedParams) -> NaturalParams {
    let mut mu = Vec::with_capacity(u.alpha.len());
    let mut acc = 0.0;
    for a in &u.alpha {
        acc += a.exp();
        mu.push(acc);
    }
    NaturalParams {
        mu,
        sigma: u.log_sigma.iter().map(|v| v.exp()).collect(),
        rho_mz: u.rho_mz.clone(),
        rho_dz: u.rho_dz.clone(),
        beta: u.beta,
        p: weights_from_generators(&u.pre_p),
    }
}

/// Inverse of [`to_natural`]; requires strictly ordered means.
pub fn from_natural(n: &NaturalParams) -> Result<UnconstrainedParams> {
    n.validate(true)?;
    let m = n.n_components();
    let mut alpha = Vec::with_capacity(m);
    alpha.push(n.mu[0].ln());
    alpha.extend(n.mu.windows(2).map(|w| (w[1] - w[0]).ln()));
    let reference = n.p[m - 1].ln();
    Ok(UnconstrainedParams {
        alpha,
        log_sigma: n.sigma.iter().map(|s| s.ln()).collect(),
        rho_mz: n.rho_mz.clone(),
        rho_dz: n.rho_dz.clone(),
        beta: n.beta,
        pre_p: n.p[..m - 1].iter().map(|p| p.ln() - reference).collect(),
    })
}

/// Jacobian of the flat natural vector with respect to the flat unconstrained
/// vector, row-major `(5m + 1) x 5m`.
pub fn natural_jacobian(u: &UnconstrainedParams) -> Vec<Vec<f64>> {
    let m = u.n_components();
    let nat = to_natural(u);
    let cols = flat_len(m);
    let mut jac = vec![vec![0.0; cols]; natural_len(m)];
    // mu_j = sum_{i <= j} exp(alpha_i)
    for j in 0..m {
        for i in 0..=j {
            jac[j][i] = u.alpha[i].exp();
        }
    }
    for k in 0..m {
        jac[m + k][m + k] = nat.sigma[k];
        jac[2 * m + k][2 * m + k] = 1.0;
        jac[3 * m + k][3 * m + k] = 1.0;
    }
    jac[4 * m][4 * m] = 1.0;
    // p_k = softmax; dp_k/dt_j = p_k (delta_kj - p_j)
    for k in 0..m {
        for j in 0..m - 1 {
            let delta = if k == j { 1.0 } else { 0.0 };
            jac[4 * m + 1 + k][4 * m + 1 + j] = nat.p[k] * (delta - nat.p[j]);
        }
    }
    jac
}

/// Coordinates held constant during sampling or optimization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FixedMaskRepr", into = "FixedMaskRepr")]
pub struct FixedMask {
    values: Vec<Option<f64>>,
}

#[derive(Serialize, Deserialize)]
struct FixedMaskRepr {
    fixed: Vec<bool>,
    values: Vec<Option<f64>>,
}

impl TryFrom<FixedMaskRepr> for FixedMask {
    type Error = Error;

    fn try_from(r: FixedMaskRepr) -> Result<Self> {
        if r.fixed.len() != r.values.len() {
            return Err(Error::LengthMismatch {
                expected: r.fixed.len(),
                got: r.values.len(),
            });
        }
        let values = r
            .fixed
            .iter()
            .zip(&r.values)
            .map(|(&f, &v)| match (f, v) {
                (true, Some(v)) if v.is_finite() => Ok(Some(v)),
                (true, _) => Err(Error::domain("fixed coordinate needs a finite value")),
                (false, _) => Ok(None),
            })
            .collect::<Result<Vec<_>>>()?;
        let mask = FixedMask { values };
        mask.validate()?;
        Ok(mask)
    }
}

impl From<FixedMask> for FixedMaskRepr {
    fn from(m: FixedMask) -> Self {
        FixedMaskRepr {
            fixed: m.values.iter().map(Option::is_some).collect(),
            values: m.values,
        }
    }
}

impl FixedMask {
    /// A mask over `dim` coordinates with nothing fixed.
    pub fn none(dim: usize) -> Self {
        FixedMask {
            values: vec![None; dim],
        }
    }

    /// Fixes every coordinate of `blocks` at its value in `at`.
    pub fn from_blocks(at: &UnconstrainedParams, blocks: &[ParamBlock]) -> Result<Self> {
        let flat = at.to_flat();
        let m = at.n_components();
        let mut mask = FixedMask::none(flat.len());
        for b in blocks {
            for i in b.indices(m) {
                mask.values[i] = Some(flat[i]);
            }
        }
        mask.validate()?;
        Ok(mask)
    }

    /// Fixes the listed flat indices at their value in `at`.
    pub fn from_indices(at: &[f64], indices: &[usize]) -> Result<Self> {
        let mut mask = FixedMask::none(at.len());
        for &i in indices {
            if i >= at.len() {
                return Err(Error::domain(format!(
                    "index {i} out of range for {} coordinates",
                    at.len()
                )));
            }
            mask.values[i] = Some(at[i]);
        }
        mask.validate()?;
        Ok(mask)
    }

    pub fn validate(&self) -> Result<()> {
        if self.free_dim() == 0 {
            return Err(Error::domain("mask must leave at least one free coordinate"));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn free_dim(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    pub fn is_fixed(&self, i: usize) -> bool {
        self.values[i].is_some()
    }

    pub fn fixed_value(&self, i: usize) -> Option<f64> {
        self.values[i]
    }

    pub fn free_indices(&self) -> Vec<usize> {
        (0..self.values.len())
            .filter(|&i| self.values[i].is_none())
            .collect()
    }

    /// Free coordinates of `full`, in canonical order.
    pub fn apply(&self, full: &[f64]) -> Vec<f64> {
        full.iter()
            .zip(&self.values)
            .filter(|(_, v)| v.is_none())
            .map(|(&x, _)| x)
            .collect()
    }

    /// Fills free coordinates from `free` and fixed ones from the mask.
    pub fn embed(&self, free: &[f64]) -> Result<Vec<f64>> {
        if free.len() != self.free_dim() {
            return Err(Error::LengthMismatch {
                expected: self.free_dim(),
                got: free.len(),
            });
        }
        let mut it = free.iter();
        Ok(self
            .values
            .iter()
            .map(|v| match v {
                Some(fixed) => *fixed,
                None => *it.next().expect("length checked"),
            })
            .collect())
    }
}

/// [`FixedMask::apply`] on typed parameters.
pub fn apply_mask(full: &UnconstrainedParams, mask: &FixedMask) -> Vec<f64> {
    mask.apply(&full.to_flat())
}

/// [`FixedMask::embed`] on typed parameters.
pub fn embed(free: &[f64], mask: &FixedMask) -> Result<UnconstrainedParams> {
    UnconstrainedParams::from_flat(&mask.embed(free)?)
}

/// Per-coordinate box on the unconstrained scale. Infinite entries mean unbounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BoxBoundsRepr", into = "BoxBoundsRepr")]
pub struct BoxBounds {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BoxBoundsRepr {
    lower: Vec<Option<f64>>,
    upper: Vec<Option<f64>>,
}

impl TryFrom<BoxBoundsRepr> for BoxBounds {
    type Error = Error;

    fn try_from(r: BoxBoundsRepr) -> Result<Self> {
        BoxBounds::new(
            r.lower
                .iter()
                .map(|v| v.unwrap_or(f64::NEG_INFINITY))
                .collect(),
            r.upper.iter().map(|v| v.unwrap_or(f64::INFINITY)).collect(),
        )
    }
}

impl From<BoxBounds> for BoxBoundsRepr {
    fn from(b: BoxBounds) -> Self {
        let finite = |v: &f64| v.is_finite().then_some(*v);
        BoxBoundsRepr {
            lower: b.lower.iter().map(finite).collect(),
            upper: b.upper.iter().map(finite).collect(),
        }
    }
}

impl BoxBounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != upper.len() {
            return Err(Error::LengthMismatch {
                expected: lower.len(),
                got: upper.len(),
            });
        }
        for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
            if l.is_nan() || u.is_nan() || *l == f64::INFINITY || *u == f64::NEG_INFINITY {
                return Err(Error::domain(format!("invalid bound at index {i}")));
            }
            if l >= u {
                return Err(Error::domain(format!(
                    "lower bound {l} is not below upper bound {u} at index {i}"
                )));
            }
        }
        Ok(BoxBounds { lower, upper })
    }

    pub fn unbounded(dim: usize) -> Self {
        BoxBounds {
            lower: vec![f64::NEG_INFINITY; dim],
            upper: vec![f64::INFINITY; dim],
        }
    }

    /// Same bound for every coordinate of a block, with correlations at (-1, 1).
    pub fn per_block(n_components: usize, half_width: f64, blocks: &[ParamBlock]) -> Self {
        let mut b = BoxBounds::unbounded(flat_len(n_components));
        for &block in blocks {
            let (lo, hi) = match block {
                ParamBlock::RhoMz | ParamBlock::RhoDz => (-1.0, 1.0),
                _ => (-half_width, half_width),
            };
            for i in block.indices(n_components) {
                b.lower[i] = lo;
                b.upper[i] = hi;
            }
        }
        b
    }

    /// The sampling box: +/-5 on every coordinate except correlations at +/-1.
    pub fn sampling_default(n_components: usize) -> Self {
        BoxBounds::per_block(n_components, 5.0, &ParamBlock::ALL)
    }

    /// The optimizer box: the sampling box widened to +/-10 outside the correlations.
    pub fn optimizer_default(n_components: usize) -> Self {
        BoxBounds::per_block(n_components, 10.0, &ParamBlock::ALL)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn restrict(&self, indices: &[usize]) -> BoxBounds {
        BoxBounds {
            lower: indices.iter().map(|&i| self.lower[i]).collect(),
            upper: indices.iter().map(|&i| self.upper[i]).collect(),
        }
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.dim()
            && x
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(v, (l, u))| *v >= *l && *v <= *u)
    }

    pub fn project(&self, x: &mut [f64]) {
        for (v, (l, u)) in x.iter_mut().zip(self.lower.iter().zip(&self.upper)) {
            *v = v.clamp(*l, *u);
        }
    }

    /// Box midpoint; 0 on any side left unbounded.
    pub fn center(&self) -> Vec<f64> {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| match (l.is_finite(), u.is_finite()) {
                (true, true) => 0.5 * (l + u),
                (true, false) => l.max(0.0),
                (false, true) => u.min(0.0),
                (false, false) => 0.0,
            })
            .collect()
    }
}

/// `log(1 + exp(x))` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn logistic(y: f64) -> f64 {
    if y >= 0.0 {
        1.0 / (1.0 + (-y).exp())
    } else {
        let e = y.exp();
        e / (1.0 + e)
    }
}

/// Constrained value, its derivative in `y`, the log-Jacobian term and that
/// term's derivative, for one coordinate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundedCoord {
    pub value: f64,
    pub dvalue_dy: f64,
    pub log_jacobian: f64,
    pub dlog_jacobian_dy: f64,
}

pub fn bound_coord(y: f64, lower: f64, upper: f64) -> BoundedCoord {
    match (lower.is_finite(), upper.is_finite()) {
        (true, true) => {
            let width = upper - lower;
            let s = logistic(y);
            let s_c = logistic(-y);
            let mut value = if s <= 0.5 {
                lower + width * s
            } else {
                upper - width * s_c
            };
            // keep strictly inside when the logistic saturates
            if value <= lower {
                value = lower.next_up();
            } else if value >= upper {
                value = upper.next_down();
            }
            BoundedCoord {
                value,
                dvalue_dy: width * s * s_c,
                log_jacobian: width.ln() - softplus(-y) - softplus(y),
                dlog_jacobian_dy: s_c - s,
            }
        }
        (true, false) => {
            let e = y.exp();
            BoundedCoord {
                value: (lower + e).max(lower.next_up()),
                dvalue_dy: e,
                log_jacobian: y,
                dlog_jacobian_dy: 1.0,
            }
        }
        (false, true) => {
            let e = y.exp();
            BoundedCoord {
                value: (upper - e).min(upper.next_down()),
                dvalue_dy: -e,
                log_jacobian: y,
                dlog_jacobian_dy: 1.0,
            }
        }
        (false, false) => BoundedCoord {
            value: y,
            dvalue_dy: 1.0,
            log_jacobian: 0.0,
            dlog_jacobian_dy: 0.0,
        },
    }
}

/// Maps the real line onto the open box coordinatewise. Doubly bounded
/// coordinates use a scaled logistic, half-bounded ones an exponential offset,
/// unbounded ones the identity. Returns the constrained point and the summed
/// log-Jacobian.
pub fn bound_transform(free: &[f64], bounds: &BoxBounds) -> (Vec<f64>, f64) {
    let mut log_jac = 0.0;
    let x = free
        .iter()
        .zip(bounds.lower.iter().zip(&bounds.upper))
        .map(|(&y, (&l, &u))| {
            let c = bound_coord(y, l, u);
            log_jac += c.log_jacobian;
            c.value
        })
        .collect();
    (x, log_jac)
}

/// Inverse of [`bound_transform`]; `x` must lie strictly inside the box.
pub fn bound_inverse(x: &[f64], bounds: &BoxBounds) -> Result<Vec<f64>> {
    x.iter()
        .zip(bounds.lower.iter().zip(&bounds.upper))
        .map(|(&v, (&l, &u))| {
            let inside = v > l && v < u;
            if !inside {
                return Err(Error::domain(format!(
                    "value {v} is not strictly inside ({l}, {u})"
                )));
            }
            Ok(match (l.is_finite(), u.is_finite()) {
                (true, true) => {
                    let s = (v - l) / (u - l);
                    (s / (1.0 - s)).ln()
                }
                (true, false) => (v - l).ln(),
                (false, true) => (u - v).ln(),
                (false, false) => v,
            })
        })
        .collect()
}
