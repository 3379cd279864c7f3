//! Autocovariance, spectral and block-based variance estimators, and the
//! Studentized statistics built from them.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::blocks::{self, BlockConfig, BlockFunctional, BlockVariables, Centering};
use crate::error::{Error, Result};
use crate::procgen::{ProcessSpec, ProcessTruth};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceMethod {
    Mbb,
    Nbb,
    LagWindow,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub value: f64,
    pub method: VarianceMethod,
    /// Whether the `1/n` floor replaced the raw value.
    pub truncated: bool,
}

impl VarianceEstimate {
    fn floored(raw: f64, n: usize, method: VarianceMethod) -> Self {
        let floor = 1.0 / n as f64;
        // `!(raw >= floor)` also catches a NaN bracket
        if !(raw >= floor) {
            Self { value: floor, method, truncated: true }
        } else {
            Self { value: raw, method, truncated: false }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentizedStat {
    pub value: f64,
    pub numerator: f64,
    /// Square root of the variance estimate.
    pub denominator: f64,
    pub variance: VarianceEstimate,
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// `γ̂(k) = n^{-1} Σ_{i<n-k} x_i x_{i+k} - x̄²`; divisor `n` and the full
/// squared mean at every lag.
pub fn sample_autocov(x: &[f64], k: usize) -> Result<f64> {
    let n = x.len();
    if k >= n {
        return Err(Error::invalid(format!("lag {k} needs a series longer than {n}")));
    }
    let m = mean(x);
    let cross: f64 = x.iter().zip(&x[k..]).map(|(a, b)| a * b).sum();
    Ok(cross / n as f64 - m * m)
}

/// `f̂(λ) = (2π)^{-1} Σ_{k=0}^{ℓ} w_k γ̂(k) cos(kλ)`, with no implicit factor
/// 2 on positive lags: the caller encodes it in `w_k`.
pub fn spectral_estimate(x: &[f64], ell: usize, weights: &[f64], lambda: f64) -> Result<f64> {
    if weights.len() != ell + 1 {
        return Err(Error::invalid(format!(
            "spectral weights need length {}, got {}",
            ell + 1,
            weights.len()
        )));
    }
    if !(lambda > -PI && lambda < PI) {
        return Err(Error::invalid("frequency must lie in (-pi, pi)"));
    }
    if ell + 1 > x.len() {
        return Err(Error::invalid("lag truncation must be at most n - 1"));
    }
    let mut total = 0.0;
    for (k, w) in weights.iter().enumerate() {
        if *w != 0.0 {
            total += w * sample_autocov(x, k)? * (k as f64 * lambda).cos();
        }
    }
    Ok(total / (2.0 * PI))
}

/// How to center block variables.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum CenterBy {
    /// Subtract a known population mean.
    Known(f64),
    /// Subtract the sample mean of the block variables.
    PlugIn,
}

pub fn center_block_vars(blockvars: &BlockVariables, by: CenterBy) -> Result<BlockVariables> {
    if blockvars.is_centered() {
        return Err(Error::invalid("block variables are already centered"));
    }
    let (c, centering) = match by {
        CenterBy::Known(c) if !c.is_finite() => {
            return Err(Error::invalid("centering constant must be finite"))
        }
        CenterBy::Known(c) => (c, Centering::Analytic(c)),
        CenterBy::PlugIn => {
            let m = blockvars.mean();
            (m, Centering::PlugIn(m))
        }
    };
    let mut out = blockvars.clone();
    out.values.iter_mut().for_each(|v| *v -= c);
    out.centering = centering;
    Ok(out)
}

/// `μ̂(ν) = N^{-1} Σ_j U_j^ν`.
pub fn mbb_moment(x: &[f64], ell: usize, nu: u32) -> Result<f64> {
    let bv = blocks::eval_block_functional(x, ell, &BlockFunctional::Power { nu })?;
    Ok(bv.mean())
}

/// Multi-index version for a `d0`-dimensional series.
pub fn mbb_moment_multivariate(coords: &[&[f64]], ell: usize, nu: &[u32]) -> Result<f64> {
    Ok(mean(&blocks::eval_power_multivariate(coords, ell, nu)?))
}

/// `n^{-1}[N^{-1} Σ U_i² - (N^{-1} Σ U_i)²]`, the MBB variance of the mean.
pub fn mbb_variance(x: &[f64], ell: usize) -> Result<VarianceEstimate> {
    let bv = blocks::eval_block_functional(x, ell, &BlockFunctional::ScaledSum)?;
    Ok(mbb_variance_from_u(&bv.values, x.len()))
}

pub(crate) fn mbb_variance_from_u(u: &[f64], n: usize) -> VarianceEstimate {
    let m1 = mean(u);
    let m2 = u.iter().map(|v| v * v).sum::<f64>() / u.len() as f64;
    VarianceEstimate {
        value: ((m2 - m1 * m1) / n as f64).max(0.0),
        method: VarianceMethod::Mbb,
        truncated: false,
    }
}

/// `U` values of the `b = n/ℓ` nonoverlapping blocks.
pub(crate) fn nonoverlap_u(x: &[f64], ell: usize) -> impl Iterator<Item = f64> + '_ {
    let s = (ell as f64).sqrt().recip();
    x.chunks_exact(ell).map(move |c| c.iter().sum::<f64>() * s)
}

/// `σ̃² = max{1/n, b^{-1} Σ (U_k - Ū)²}` over nonoverlapping blocks.
pub fn nbb_variance(x: &[f64], ell: usize) -> Result<VarianceEstimate> {
    let cfg = BlockConfig::new(x.len(), ell)?;
    if !cfg.divides() {
        return Err(Error::invalid(format!(
            "nonoverlapping variance needs ell | n (n = {}, ell = {ell})",
            cfg.n
        )));
    }
    Ok(nbb_variance_unchecked(x, ell))
}

pub(crate) fn nbb_variance_unchecked(x: &[f64], ell: usize) -> VarianceEstimate {
    let b = (x.len() / ell) as f64;
    let (mut s, mut ss) = (0.0, 0.0);
    let mut u = Vec::with_capacity(x.len() / ell);
    for v in nonoverlap_u(x, ell) {
        s += v;
        u.push(v);
    }
    let m = s / b;
    for v in &u {
        ss += (v - m) * (v - m);
    }
    VarianceEstimate::floored(ss / b, x.len(), VarianceMethod::Nbb)
}

/// `T_n = √n (x̄ - μ) / σ̃`.
pub fn studentized_mean(x: &[f64], ell: usize, mu: f64) -> Result<StudentizedStat> {
    let var = nbb_variance(x, ell)?;
    Ok(studentize((x.len() as f64).sqrt() * (mean(x) - mu), var))
}

fn studentize(numerator: f64, variance: VarianceEstimate) -> StudentizedStat {
    let denominator = variance.value.sqrt();
    StudentizedStat { value: numerator / denominator, numerator, denominator, variance }
}

/// `σ̂² = max{1/n, [γ̂⁰(0) + 2 Σ_{k=1}^{2ℓ} (1 - k/N) γ̂⁰(k)] b/N}` where `γ̂⁰`
/// are the autocovariances of the block variables about their mean.
pub fn lag_window_variance(blockvars: &BlockVariables) -> Result<VarianceEstimate> {
    let cfg = blockvars.config;
    check_lag_window(&cfg)?;
    Ok(lag_window_unchecked(&blockvars.values, &cfg))
}

fn check_lag_window(cfg: &BlockConfig) -> Result<()> {
    if 2 * cfg.ell + 1 > cfg.n_blocks {
        return Err(Error::invalid(format!(
            "lag-window variance needs 2*ell <= N - 1 (ell = {}, N = {})",
            cfg.ell, cfg.n_blocks
        )));
    }
    Ok(())
}

pub(crate) fn lag_window_unchecked(y: &[f64], cfg: &BlockConfig) -> VarianceEstimate {
    let nb = y.len();
    let m = mean(y);
    let d: Vec<f64> = y.iter().map(|v| v - m).collect();
    let nf = nb as f64;
    let mut bracket = d.iter().map(|v| v * v).sum::<f64>() / nf;
    for k in 1..=2 * cfg.ell {
        let g: f64 = d.iter().zip(&d[k..]).map(|(a, b)| a * b).sum::<f64>() / nf;
        bracket += 2.0 * (1.0 - k as f64 / nf) * g;
    }
    VarianceEstimate::floored(bracket * cfg.b as f64 / nf, cfg.n, VarianceMethod::LagWindow)
}

/// `T_N = √b (Ȳ_N - EȲ_N) / σ̂`.
pub fn studentized_block_mean(blockvars: &BlockVariables, true_mean: f64) -> Result<StudentizedStat> {
    let var = lag_window_variance(blockvars)?;
    let b = blockvars.config.b as f64;
    Ok(studentize(b.sqrt() * (blockvars.mean() - true_mean), var))
}

/// Exact `E Y` of the periodogram block variable for a stationary process:
/// `(2π)^{-1} Σ_{|k|<ℓ} (1 - |k|/ℓ) γ(k) cos(kω)`.
pub fn expected_periodogram(truth: &ProcessTruth, ell: usize, omega: f64) -> f64 {
    let l = ell as f64;
    let tail: f64 = (1..ell).map(|k| (1.0 - k as f64 / l) * truth.gamma(k) * (k as f64 * omega).cos()).sum();
    (truth.gamma(0) + 2.0 * tail) / (2.0 * PI)
}

/// Monte Carlo estimate of `E Y` for any functional: `reps` independent
/// stationary paths of length ℓ, each giving one block variable. Streams
/// come from the `side-mc/block-mean` namespace. Returns `(mean, standard error)`.
pub fn block_mean_side_mc(
    spec: &ProcessSpec,
    ell: usize,
    functional: &BlockFunctional,
    reps: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    spec.validate()?;
    if reps < 2 {
        return Err(Error::invalid("side Monte Carlo needs at least 2 replicates"));
    }
    BlockConfig::new(ell, ell)?;
    let mut sampler = spec.sampler();
    let mut stream = rng::child_stream(seed, "side-mc/block-mean", 0);
    let mut path = Vec::with_capacity(ell);
    let (mut s, mut ss) = (0.0, 0.0);
    for _ in 0..reps {
        sampler.fill(&mut stream, ell, &mut path);
        let y = functional.eval_block(&path);
        s += y;
        ss += y * y;
    }
    let r = reps as f64;
    let m = s / r;
    let var = ((ss - r * m * m) / (r - 1.0)).max(0.0);
    Ok((m, (var / r).sqrt()))
}
