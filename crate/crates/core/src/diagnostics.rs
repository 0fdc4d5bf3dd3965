//! Chain and model diagnostics: Geweke scores, global mixture moments,
//! information criteria and per-parameter summaries.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{natural_names, NaturalParams};
use crate::sampler::ChainTable;

/// Minimum column length accepted by [`geweke`].
pub const GEWEKE_MIN_LEN: usize = 100;

/// Convergence criterion on the Geweke score.
pub const GEWEKE_CRITERION: f64 = 1.28;

/// Spectral density at frequency zero, estimated by a Bartlett-windowed sum of
/// autocovariances with lag window `4 n^(1/3)`.
pub fn spectral_density_zero(x: &[f64]) -> f64 {
    let n = x.len();
    let mean = x.iter().sum::<f64>() / n as f64;
    let dev: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let autocov = |k: usize| dev[..n - k].iter().zip(&dev[k..]).map(|(a, b)| a * b).sum::<f64>() / n as f64;
    let lags = ((4.0 * (n as f64).cbrt()) as usize).min(n - 1);
    let mut s = autocov(0);
    for k in 1..=lags {
        s += 2.0 * (1.0 - k as f64 / (lags as f64 + 1.0)) * autocov(k);
    }
    s.max(0.0)
}

/// Geweke Z-score comparing the first `frac_a` and last `frac_b` of a column.
pub fn geweke(column: &[f64], frac_a: f64, frac_b: f64) -> Result<f64> {
    if column.len() < GEWEKE_MIN_LEN {
        return Err(Error::ChainTooShort {
            len: column.len(),
            min: GEWEKE_MIN_LEN,
        });
    }
    if !(frac_a > 0.0 && frac_b > 0.0 && frac_a + frac_b <= 1.0) {
        return Err(Error::domain("need frac_a, frac_b > 0 and frac_a + frac_b <= 1"));
    }
    if column.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("chain column contains non-finite values"));
    }
    let n = column.len();
    let n_a = ((frac_a * n as f64) as usize).max(2);
    let n_b = ((frac_b * n as f64) as usize).max(2);
    let a = &column[..n_a];
    let b = &column[n - n_b..];
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let var = spectral_density_zero(a) / n_a as f64 + spectral_density_zero(b) / n_b as f64;
    if !(var > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok((mean(a) - mean(b)) / var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GewekeResult {
    pub names: Vec<String>,
    /// `None` where the column is constant (for example a fixed parameter).
    pub z_scores: Vec<Option<f64>>,
    pub frac_a: f64,
    pub frac_b: f64,
    /// `|Z| <= 1.28`; constant columns count as passing.
    pub pass: Vec<bool>,
}

/// Geweke scores for every exported natural parameter of a chain.
pub fn geweke_chain(chain: &ChainTable, frac_a: f64, frac_b: f64) -> Result<GewekeResult> {
    let mut names = natural_names(chain.n_components);
    names.pop();
    let mut z_scores = Vec::with_capacity(names.len());
    for j in 0..names.len() {
        match geweke(&chain.column(j), frac_a, frac_b) {
            Ok(z) => z_scores.push(Some(z)),
            Err(Error::ZeroVariance) => z_scores.push(None),
            Err(e) => return Err(e.with_context(format!("geweke on {}", names[j]))),
        }
    }
    let pass = z_scores
        .iter()
        .map(|z| z.is_none_or(|z| z.abs() <= GEWEKE_CRITERION))
        .collect();
    Ok(GewekeResult {
        names,
        z_scores,
        frac_a,
        frac_b,
        pass,
    })
}

/// Moments of the overall mixture at the female baseline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GlobalQuantities {
    pub mu_g: f64,
    pub sigma_g: f64,
    pub rho_mz_g: f64,
    pub rho_dz_g: f64,
}

pub fn global_quantities(n: &NaturalParams) -> Result<GlobalQuantities> {
    let m = n.n_components();
    if n.sigma.iter().any(|s| !(*s > 0.0))
        || n.p.iter().any(|p| !(*p >= 0.0))
        || n.rho_mz.iter().chain(&n.rho_dz).any(|r| !(r.abs() <= 1.0))
        || n.mu.iter().any(|v| !v.is_finite())
    {
        return Err(Error::domain("invalid mixture parameters"));
    }
    let p_sum: f64 = n.p.iter().sum();
    if (p_sum - 1.0).abs() > 1e-9 {
        return Err(Error::domain(format!("weights sum to {p_sum}")));
    }
    let mu_g: f64 = (0..m).map(|k| n.p[k] * n.mu[k]).sum();
    let second: f64 = (0..m)
        .map(|k| n.p[k] * (n.sigma[k] * n.sigma[k] + n.mu[k] * n.mu[k]))
        .sum();
    let var = second - mu_g * mu_g;
    if !(var > 0.0) {
        return Err(Error::domain("mixture variance is not positive"));
    }
    let corr = |rho: &[f64]| {
        let cov: f64 = (0..m)
            .map(|k| n.p[k] * (rho[k] * n.sigma[k] * n.sigma[k] + n.mu[k] * n.mu[k]))
            .sum::<f64>()
            - mu_g * mu_g;
        cov / var
    };
    Ok(GlobalQuantities {
        mu_g,
        sigma_g: var.sqrt(),
        rho_mz_g: corr(&n.rho_mz),
        rho_dz_g: corr(&n.rho_dz),
    })
}

/// Global quantities of a chain, both averaged over draws and evaluated at
/// the posterior-mean parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainGlobal {
    pub per_draw_mean: GlobalQuantities,
    pub at_means: GlobalQuantities,
}

pub fn global_quantities_chain(chain: &ChainTable) -> Result<ChainGlobal> {
    if chain.is_empty() {
        return Err(Error::domain("empty chain"));
    }
    let mut acc = [0.0; 4];
    for row in &chain.natural {
        let g = global_quantities(&NaturalParams::from_flat(row)?)?;
        for (a, v) in acc.iter_mut().zip([g.mu_g, g.sigma_g, g.rho_mz_g, g.rho_dz_g]) {
            *a += v;
        }
    }
    let n = chain.len() as f64;
    let means: Vec<f64> = (0..chain.natural[0].len())
        .map(|j| chain.natural.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    Ok(ChainGlobal {
        per_draw_mean: GlobalQuantities {
            mu_g: acc[0] / n,
            sigma_g: acc[1] / n,
            rho_mz_g: acc[2] / n,
            rho_dz_g: acc[3] / n,
        },
        at_means: global_quantities(&NaturalParams::from_flat(&means)?)?,
    })
}

/// `(AIC, BIC)` for a fit with `k` free parameters on `n_obs` observations.
pub fn aic_bic(nll: f64, k: usize, n_obs: usize) -> (f64, f64) {
    let k = k as f64;
    (2.0 * k + 2.0 * nll, k * (n_obs as f64).ln() + 2.0 * nll)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
}

/// Natural-scale mean and sample SD of every parameter.
pub fn summarize(chain: &ChainTable) -> Vec<ParamSummary> {
    let names = natural_names(chain.n_components);
    names
        .into_iter()
        .enumerate()
        .map(|(j, name)| {
            // Welford keeps a constant column at exactly zero spread
            let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
            for row in &chain.natural {
                n += 1.0;
                let d = row[j] - mean;
                mean += d / n;
                m2 += d * (row[j] - mean);
            }
            let sd = if n > 1.0 { (m2 / (n - 1.0)).sqrt() } else { 0.0 };
            ParamSummary { name, mean, sd }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsReport {
    pub geweke: Option<GewekeResult>,
    pub global: ChainGlobal,
    pub min_nll: f64,
    pub aic: f64,
    pub bic: f64,
    pub summary: Vec<ParamSummary>,
}

/// Full diagnostics for a chain; AIC/BIC use the chain's lowest NLL.
/// Geweke is omitted when the chain is too short.
pub fn diagnose(chain: &ChainTable, n_obs: usize) -> Result<DiagnosticsReport> {
    let geweke = match geweke_chain(chain, 0.1, 0.5) {
        Ok(g) => Some(g),
        Err(e) if matches!(e.root(), Error::ChainTooShort { .. }) => None,
        Err(e) => return Err(e),
    };
    let min_nll = chain.nll.iter().copied().fold(f64::INFINITY, f64::min);
    let (aic, bic) = aic_bic(min_nll, crate::params::flat_len(chain.n_components), n_obs);
    Ok(DiagnosticsReport {
        geweke,
        global: global_quantities_chain(chain)?,
        min_nll,
        aic,
        bic,
        summary: summarize(chain),
    })
}

/// `%g`-style formatting with `digits` significant digits.
pub fn format_sig(v: f64, digits: usize) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    if v == 0.0 {
        return "0".to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if exp < -4 || exp >= digits as i32 {
        let s = format!("{:.*e}", digits - 1, v);
        let (mant, e) = s.split_once('e').expect("exponent form");
        format!("{}e{}", trim_zeros(mant), e)
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Summary table, one row per parameter, 6 significant digits.
pub fn write_summary_csv<W: Write>(summary: &[ParamSummary], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["parameter", "mean", "sd"])?;
    for s in summary {
        w.write_record([s.name.clone(), format_sig(s.mean, 6), format_sig(s.sd, 6)])?;
    }
    w.flush()?;
    Ok(())
}
