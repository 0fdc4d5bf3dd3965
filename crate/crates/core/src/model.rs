//! Twin-pair bivariate Gaussian mixture: data, likelihood, simulation.
//!
//! Both twins in a pair share the component mean and standard deviation; the
//! within-pair correlation depends on zygosity. Male pairs have every
//! component mean shifted by the common offset `beta`.

use std::io::{Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted::WeightedIndex, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::Objective;
use crate::params::{flat_len, to_natural, NaturalParams, UnconstrainedParams};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Zygosity {
    #[serde(rename = "MZ")]
    Mz,
    #[serde(rename = "DZ")]
    Dz,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sex {
    #[serde(rename = "F")]
    Female,
    #[serde(rename = "M")]
    Male,
}

impl Sex {
    /// Indicator multiplying `beta` in the mean.
    pub fn covariate(self) -> f64 {
        match self {
            Sex::Female => 0.0,
            Sex::Male => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwinPair {
    pub x1: f64,
    pub x2: f64,
    pub zygosity: Zygosity,
    pub sex: Sex,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TwinDataset {
    rows: Vec<TwinPair>,
}

impl TwinDataset {
    pub fn new(rows: Vec<TwinPair>) -> Result<Self> {
        if let Some(i) = rows
            .iter()
            .position(|r| !r.x1.is_finite() || !r.x2.is_finite())
        {
            return Err(Error::domain(format!("row {i} has a non-finite value")));
        }
        Ok(TwinDataset { rows })
    }

    pub fn rows(&self) -> &[TwinPair] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn n_mz(&self) -> usize {
        self.rows
            .iter()
            .filter(|r| r.zygosity == Zygosity::Mz)
            .count()
    }

    pub fn n_dz(&self) -> usize {
        self.len() - self.n_mz()
    }

    /// Rows `self` followed by `other`.
    pub fn concat(&self, other: &TwinDataset) -> TwinDataset {
        let mut rows = self.rows.clone();
        rows.extend_from_slice(&other.rows);
        TwinDataset { rows }
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["x1", "x2", "zygosity", "sex"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(Error::domain(format!(
                "dataset header must be x1,x2,zygosity,sex (got {})",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let rows = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<TwinPair>, _>>()?;
        TwinDataset::new(rows)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(writer);
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        TwinDataset::read_csv(std::fs::File::open(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_components: usize,
}

impl ModelSpec {
    pub fn new(n_components: usize) -> Result<Self> {
        if !(1..=3).contains(&n_components) {
            return Err(Error::domain(format!(
                "{n_components} components requested; 1, 2 or 3 are supported"
            )));
        }
        Ok(ModelSpec { n_components })
    }

    pub fn dim(&self) -> usize {
        flat_len(self.n_components)
    }

    /// Number of free parameters, the `k` of information criteria.
    pub fn n_parameters(&self) -> usize {
        self.dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NllResult {
    pub nll: f64,
    /// Gradient in flat unconstrained order; all zero when invalid.
    pub gradient: Vec<f64>,
    pub valid: bool,
}

/// Log density of the equicorrelated bivariate normal
/// `N2(x; mu, sigma^2 [[1, rho], [rho, 1]])`.
pub fn bivariate_normal_logpdf(x: [f64; 2], mu: [f64; 2], sigma: f64, rho: f64) -> Result<f64> {
    if !(sigma > 0.0) || !(rho.abs() < 1.0) {
        return Err(Error::domain(format!(
            "need sigma > 0 and |rho| < 1 (sigma = {sigma}, rho = {rho})"
        )));
    }
    let z1 = (x[0] - mu[0]) / sigma;
    let z2 = (x[1] - mu[1]) / sigma;
    let one_m_r2 = 1.0 - rho * rho;
    let q = z1 * z1 - 2.0 * rho * z1 * z2 + z2 * z2;
    Ok(-LN_2PI - 2.0 * sigma.ln() - 0.5 * one_m_r2.ln() - q / (2.0 * one_m_r2))
}

/// Per-component constants for one zygosity.
struct ComponentTerms {
    mean: f64,
    inv_sigma: f64,
    rho: f64,
    inv_one_m_r2: f64,
    /// `1 / (sigma (1 + rho))`
    mean_scale: f64,
    /// `ln p - ln 2pi - 2 ln sigma - 0.5 ln(1 - rho^2)`
    offset: f64,
}

fn component_terms(n: &NaturalParams, rho: &[f64]) -> Vec<ComponentTerms> {
    (0..n.mu.len())
        .map(|k| {
            let r = rho[k];
            let one_m_r2 = 1.0 - r * r;
            ComponentTerms {
                mean: n.mu[k],
                inv_sigma: 1.0 / n.sigma[k],
                rho: r,
                inv_one_m_r2: 1.0 / one_m_r2,
                mean_scale: 1.0 / (n.sigma[k] * (1.0 + r)),
                offset: n.p[k].ln() - LN_2PI - 2.0 * n.sigma[k].ln() - 0.5 * one_m_r2.ln(),
            }
        })
        .collect()
}

fn params_valid(n: &NaturalParams) -> bool {
    n.sigma.iter().all(|s| s.is_finite() && *s > 0.0)
        && n.rho_mz.iter().chain(&n.rho_dz).all(|r| r.abs() < 1.0)
        && n.mu.iter().all(|m| m.is_finite())
        && n.beta.is_finite()
}

/// Negative log-likelihood of the mixture over the dataset, with its exact
/// gradient in unconstrained coordinates. Any `|rho| >= 1` (or an otherwise
/// degenerate component) yields an invalid result with `nll = +inf`.
pub fn nll(u: &UnconstrainedParams, data: &TwinDataset, spec: &ModelSpec) -> Result<NllResult> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if u.n_components() != spec.n_components {
        return Err(Error::LengthMismatch {
            expected: spec.dim(),
            got: u.dim(),
        });
    }
    u.validate()?;
    let mut gradient = vec![0.0; spec.dim()];
    let value = nll_into(u, data, &mut gradient);
    let valid = value.is_finite();
    Ok(NllResult {
        nll: if valid { value } else { f64::INFINITY },
        gradient,
        valid,
    })
}

/// Core evaluation. Writes the gradient; returns `+inf` (and zero gradient)
/// outside the valid region.
fn nll_into(u: &UnconstrainedParams, data: &TwinDataset, grad: &mut [f64]) -> f64 {
    let m = u.n_components();
    grad.iter_mut().for_each(|g| *g = 0.0);
    let nat = to_natural(u);
    if !params_valid(&nat) {
        return f64::INFINITY;
    }
    let terms_mz = component_terms(&nat, &nat.rho_mz);
    let terms_dz = component_terms(&nat, &nat.rho_dz);

    // natural-scale accumulators
    let mut d_mu = vec![0.0; m];
    let mut d_log_sigma = vec![0.0; m];
    let mut d_rho_mz = vec![0.0; m];
    let mut d_rho_dz = vec![0.0; m];
    let mut d_beta = 0.0;
    let mut resp_sum = vec![0.0; m];

    let mut log_terms = vec![0.0; m];
    let mut dl_dmean = vec![0.0; m];
    let mut dl_dlogsig = vec![0.0; m];
    let mut dl_drho = vec![0.0; m];
    let mut total = 0.0;

    for row in data.rows() {
        let (terms, d_rho) = match row.zygosity {
            Zygosity::Mz => (&terms_mz, &mut d_rho_mz),
            Zygosity::Dz => (&terms_dz, &mut d_rho_dz),
        };
        let shift = row.sex.covariate() * nat.beta;
        let mut max = f64::NEG_INFINITY;
        for (k, t) in terms.iter().enumerate() {
            let z1 = (row.x1 - t.mean - shift) * t.inv_sigma;
            let z2 = (row.x2 - t.mean - shift) * t.inv_sigma;
            let q = z1 * z1 - 2.0 * t.rho * z1 * z2 + z2 * z2;
            let qn = q * t.inv_one_m_r2;
            log_terms[k] = t.offset - 0.5 * qn;
            dl_dmean[k] = (z1 + z2) * t.mean_scale;
            dl_dlogsig[k] = qn - 2.0;
            dl_drho[k] = (t.rho + z1 * z2) * t.inv_one_m_r2 - t.rho * qn * t.inv_one_m_r2;
            max = max.max(log_terms[k]);
        }
        if max == f64::NEG_INFINITY || max.is_nan() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::INFINITY;
        }
        let mut sum = 0.0;
        for l in log_terms.iter_mut() {
            *l = (*l - max).exp();
            sum += *l;
        }
        total -= max + sum.ln();
        let inv_sum = 1.0 / sum;
        for k in 0..m {
            let r = log_terms[k] * inv_sum;
            resp_sum[k] += r;
            let gm = r * dl_dmean[k];
            d_mu[k] -= gm;
            d_beta -= row.sex.covariate() * gm;
            d_log_sigma[k] -= r * dl_dlogsig[k];
            d_rho[k] -= r * dl_drho[k];
        }
    }
    if !total.is_finite() {
        grad.iter_mut().for_each(|g| *g = 0.0);
        return f64::INFINITY;
    }

    // chain rule through the ordered-mean map: d mu_j / d alpha_i = exp(alpha_i), i <= j
    let mut tail = 0.0;
    for i in (0..m).rev() {
        tail += d_mu[i];
        grad[i] = u.alpha[i].exp() * tail;
    }
    grad[m..2 * m].copy_from_slice(&d_log_sigma);
    grad[2 * m..3 * m].copy_from_slice(&d_rho_mz);
    grad[3 * m..4 * m].copy_from_slice(&d_rho_dz);
    grad[4 * m] = d_beta;
    let n_rows = data.len() as f64;
    for j in 0..m - 1 {
        grad[4 * m + 1 + j] = -(resp_sum[j] - n_rows * nat.p[j]);
    }
    total
}

/// The likelihood as an [`Objective`] over flat unconstrained vectors.
pub struct TwinModel<'a> {
    data: &'a TwinDataset,
    spec: ModelSpec,
}

impl<'a> TwinModel<'a> {
    pub fn new(data: &'a TwinDataset, spec: ModelSpec) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(TwinModel { data, spec })
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    pub fn data(&self) -> &TwinDataset {
        self.data
    }
}

impl Objective for TwinModel<'_> {
    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        if x.iter().any(|v| !v.is_finite()) {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::INFINITY;
        }
        let u = UnconstrainedParams::from_flat(x).expect("flat length matches model");
        nll_into(&u, self.data, grad)
    }
}

/// Group sizes for a simulated dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimulationLayout {
    pub n_total: usize,
    pub frac_mz: f64,
    pub frac_male: f64,
}

impl Default for SimulationLayout {
    fn default() -> Self {
        SimulationLayout {
            n_total: 1200,
            frac_mz: 1.0 / 3.0,
            frac_male: 0.5,
        }
    }
}

impl SimulationLayout {
    /// Rounded pair counts `(mz_female, mz_male, dz_female, dz_male)`.
    pub fn counts(&self) -> (usize, usize, usize, usize) {
        let n_mz = (self.n_total as f64 * self.frac_mz).round() as usize;
        let n_dz = self.n_total - n_mz;
        let mz_male = (n_mz as f64 * self.frac_male).round() as usize;
        let dz_male = (n_dz as f64 * self.frac_male).round() as usize;
        (n_mz - mz_male, mz_male, n_dz - dz_male, dz_male)
    }
}

fn check_simulable(n: &NaturalParams) -> Result<()> {
    let m = n.mu.len();
    if m == 0 || [n.sigma.len(), n.rho_mz.len(), n.rho_dz.len(), n.p.len()] != [m; 4] {
        return Err(Error::domain("inconsistent component counts"));
    }
    if n.to_flat().iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("parameters must be finite"));
    }
    if n.sigma.iter().any(|&s| s <= 0.0) {
        return Err(Error::domain("sigma must be positive"));
    }
    if n.rho_mz.iter().chain(&n.rho_dz).any(|r| r.abs() >= 1.0) {
        return Err(Error::domain("correlations must lie in (-1, 1)"));
    }
    if n.p.iter().any(|&p| p < 0.0) || (n.p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::domain("weights must be non-negative and sum to 1"));
    }
    Ok(())
}

/// Draws a twin dataset. Groups are laid out MZ-female, MZ-male, DZ-female,
/// DZ-male; each pair picks a component by weight, then draws from that
/// component's bivariate normal.
pub fn simulate(params: &NaturalParams, layout: SimulationLayout, seed: u64) -> Result<TwinDataset> {
    check_simulable(params)?;
    if layout.n_total == 0 {
        return Err(Error::domain("n_total must be positive"));
    }
    for (name, f) in [("frac_mz", layout.frac_mz), ("frac_male", layout.frac_male)] {
        if !(f > 0.0 && f < 1.0) {
            return Err(Error::domain(format!("{name} must lie in (0, 1), got {f}")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pick = WeightedIndex::new(&params.p).map_err(|e| Error::domain(e.to_string()))?;
    let (mz_f, mz_m, dz_f, dz_m) = layout.counts();
    let groups = [
        (Zygosity::Mz, Sex::Female, mz_f),
        (Zygosity::Mz, Sex::Male, mz_m),
        (Zygosity::Dz, Sex::Female, dz_f),
        (Zygosity::Dz, Sex::Male, dz_m),
    ];
    let mut rows = Vec::with_capacity(layout.n_total);
    for (zygosity, sex, count) in groups {
        for _ in 0..count {
            let k = pick.sample(&mut rng);
            let rho = match zygosity {
                Zygosity::Mz => params.rho_mz[k],
                Zygosity::Dz => params.rho_dz[k],
            };
            let mean = params.mu[k] + sex.covariate() * params.beta;
            let e1: f64 = StandardNormal.sample(&mut rng);
            let e2: f64 = StandardNormal.sample(&mut rng);
            let s = params.sigma[k];
            rows.push(TwinPair {
                x1: mean + s * e1,
                x2: mean + s * (rho * e1 + (1.0 - rho * rho).sqrt() * e2),
                zygosity,
                sex,
            });
        }
    }
    TwinDataset::new(rows)
}
