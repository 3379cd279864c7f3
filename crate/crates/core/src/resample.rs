//! Moving, nonoverlapping and blocks-of-blocks bootstraps.
//!
//! Replicate `r` of a plan always draws from
//! `rng::child_stream(master_seed, "bootstrap/replicate", r)`, so results do
//! not depend on evaluation order or thread count.

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::blocks::{BlockConfig, BlockVariables};
use crate::error::{Error, Result};
use crate::estimators::{self, StudentizedStat, VarianceEstimate, VarianceMethod};
use crate::rng::{self, Stream};

pub const ENUMERATION_CAP: u64 = 1_000_000;
const REPLICATE_NS: &str = "bootstrap/replicate";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Mbb,
    Nbb,
    Bobb,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "mbb" => Ok(Scheme::Mbb),
            "nbb" => Ok(Scheme::Nbb),
            "bobb" => Ok(Scheme::Bobb),
            other => Err(Error::invalid(format!("unknown resampling scheme `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResamplePlan {
    pub scheme: Scheme,
    /// ℓ for MBB/NBB, ℓ₁ for BOBB.
    pub block_len: usize,
    pub replicates: usize,
    pub master_seed: u64,
    pub statistic: String,
}

/// What a registered statistic sees besides the resampled values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StatContext {
    /// Length of the original series.
    pub n: usize,
    pub block_len: usize,
    /// Bootstrap-population mean of the resampled values (`E_* X̄*` or `E_* Ȳ*`).
    pub center: f64,
}

pub type Statistic = Arc<dyn Fn(&[f64], &StatContext) -> f64 + Send + Sync>;

/// Statistics addressable by name from configs and the CLI.
#[derive(Clone)]
pub struct StatisticRegistry {
    map: HashMap<String, Statistic>,
}

impl fmt::Debug for StatisticRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("StatisticRegistry").field("names", &self.names()).finish()
    }
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

impl Default for StatisticRegistry {
    /// `mean`, `variance` (divisor n), `mbb-variance`, `studentized-mean`,
    /// `constant` and `bobb-studentized`.
    fn default() -> Self {
        let mut r = Self { map: HashMap::new() };
        r.register("mean", |x, _| mean(x));
        r.register("variance", |x, _| {
            let m = mean(x);
            x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64
        });
        r.register("mbb-variance", |x, c| {
            estimators::mbb_variance(x, c.block_len.min(x.len())).map(|v| v.value).unwrap_or(f64::NAN)
        });
        r.register("studentized-mean", |x, c| {
            let var = estimators::nbb_variance_unchecked(x, c.block_len);
            (x.len() as f64).sqrt() * (mean(x) - c.center) / var.value.sqrt()
        });
        r.register("constant", |_, _| 0.0);
        r.register("bobb-studentized", |y, c| bobb_studentized(y, c.block_len, c.center, c.n).value);
        r
    }
}

impl StatisticRegistry {
    pub fn register<F>(&mut self, name: &str, f: F)
    where
        F: Fn(&[f64], &StatContext) -> f64 + Send + Sync + 'static,
    {
        self.map.insert(name.to_string(), Arc::new(f));
    }

    pub fn get(&self, name: &str) -> Result<Statistic> {
        self.map
            .get(name)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("unknown statistic `{name}`")))
    }

    pub fn names(&self) -> Vec<String> {
        let mut v: Vec<_> = self.map.keys().cloned().collect();
        v.sort();
        v
    }
}

/// Draw `b = n/ℓ` overlapping blocks uniformly with replacement and
/// concatenate them into `out`.
pub fn mbb_resample(x: &[f64], ell: usize, stream: &mut Stream, out: &mut Vec<f64>) -> Result<()> {
    let cfg = divisible(x.len(), ell, "moving block bootstrap")?;
    mbb_fill(x, &cfg, stream, out);
    Ok(())
}

fn divisible(n: usize, ell: usize, what: &str) -> Result<BlockConfig> {
    let cfg = BlockConfig::new(n, ell)?;
    if !cfg.divides() {
        return Err(Error::invalid(format!("{what} needs ell | n (n = {n}, ell = {ell})")));
    }
    Ok(cfg)
}

fn mbb_fill(x: &[f64], cfg: &BlockConfig, stream: &mut Stream, out: &mut Vec<f64>) {
    out.clear();
    for _ in 0..cfg.b {
        let i = stream.random_range(0..cfg.n_blocks);
        out.extend_from_slice(&x[i..i + cfg.ell]);
    }
}

fn nbb_fill(x: &[f64], cfg: &BlockConfig, stream: &mut Stream, out: &mut Vec<f64>) {
    out.clear();
    for _ in 0..cfg.b {
        let k = stream.random_range(0..cfg.b) * cfg.ell;
        out.extend_from_slice(&x[k..k + cfg.ell]);
    }
}

/// `E_* X̄*` under the MBB: the average of the `N` overlapping block means.
pub fn mbb_conditional_mean(x: &[f64], ell: usize) -> Result<f64> {
    let cfg = BlockConfig::new(x.len(), ell)?;
    Ok(moving_block_means(x, ell).iter().sum::<f64>() / cfg.n_blocks as f64)
}

/// Means of all `len - w + 1` windows of width `w`.
fn moving_block_means(y: &[f64], w: usize) -> Vec<f64> {
    let scale = 1.0 / w as f64;
    let mut out = Vec::with_capacity(y.len() + 1 - w);
    let mut s = 0.0;
    for i in 0..=y.len() - w {
        if i % 256 == 0 {
            s = y[i..i + w].iter().sum();
        } else {
            s += y[i + w - 1] - y[i - 1];
        }
        out.push(s * scale);
    }
    out
}

/// Resampled statistic values. Exact distributions store every equally
/// likely outcome, so both modes share one empirical-CDF representation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BootstrapDistribution {
    /// In replicate (or enumeration) order.
    pub samples: Vec<f64>,
    pub is_exact: bool,
    #[serde(skip)]
    sorted: Vec<f64>,
}

impl BootstrapDistribution {
    pub fn new(samples: Vec<f64>, is_exact: bool) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("a bootstrap distribution needs at least one value"));
        }
        let mut sorted = samples.clone();
        sorted.sort_by(f64::total_cmp);
        Ok(Self { samples, is_exact, sorted })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sorted(&self) -> &[f64] {
        &self.sorted
    }

    pub fn cdf(&self, x: f64) -> f64 {
        self.sorted.partition_point(|v| *v <= x) as f64 / self.sorted.len() as f64
    }

    /// Smallest sample `v` with `cdf(v) >= p`.
    pub fn quantile(&self, p: f64) -> f64 {
        let m = self.sorted.len();
        let k = (p * m as f64).ceil() as usize;
        self.sorted[k.clamp(1, m) - 1]
    }

    pub fn mean(&self) -> f64 {
        mean(&self.samples)
    }

    /// Distinct values with their probabilities.
    pub fn merged_atoms(&self) -> Vec<(f64, f64)> {
        let total = self.sorted.len() as f64;
        let mut out: Vec<(f64, usize)> = Vec::new();
        for &v in &self.sorted {
            match out.last_mut() {
                Some((u, c)) if *u == v => *c += 1,
                _ => out.push((v, 1)),
            }
        }
        out.into_iter().map(|(v, c)| (v, c as f64 / total)).collect()
    }
}

/// Data to resample: a raw series (MBB, NBB) or block variables (BOBB).
#[derive(Clone, Copy, Debug)]
pub enum ResampleInput<'a> {
    Series(&'a [f64]),
    BlockVars(&'a BlockVariables),
}

/// Monte Carlo bootstrap law of a registered statistic.
pub fn bootstrap_distribution(
    plan: &ResamplePlan,
    input: ResampleInput<'_>,
    registry: &StatisticRegistry,
) -> Result<BootstrapDistribution> {
    if plan.replicates == 0 {
        return Err(Error::invalid("bootstrap needs at least one replicate"));
    }
    let stat = registry.get(&plan.statistic)?;
    let seed = plan.master_seed;
    let samples: Vec<f64> = match (plan.scheme, input) {
        (Scheme::Mbb | Scheme::Nbb, ResampleInput::Series(x)) => {
            let cfg = divisible(x.len(), plan.block_len, "block bootstrap")?;
            let nbb = plan.scheme == Scheme::Nbb;
            let center = if nbb { mean(x) } else { mbb_conditional_mean(x, cfg.ell)? };
            let ctx = StatContext { n: cfg.n, block_len: cfg.ell, center };
            (0..plan.replicates)
                .into_par_iter()
                .map_init(Vec::new, |buf, r| {
                    let mut s = rng::child_stream(seed, REPLICATE_NS, r as u64);
                    if nbb {
                        nbb_fill(x, &cfg, &mut s, buf);
                    } else {
                        mbb_fill(x, &cfg, &mut s, buf);
                    }
                    stat(buf, &ctx)
                })
                .collect()
        }
        (Scheme::Bobb, ResampleInput::BlockVars(bv)) => {
            let y = &bv.values;
            let ell1 = plan.block_len;
            bobb_check(y.len(), ell1)?;
            let ctx = StatContext { n: bv.config.n, block_len: ell1, center: bobb_expected_mean(y, ell1)? };
            (0..plan.replicates)
                .into_par_iter()
                .map_init(Vec::new, |buf, r| {
                    let mut s = rng::child_stream(seed, REPLICATE_NS, r as u64);
                    bobb_fill(y, ell1, &mut s, buf);
                    stat(buf, &ctx)
                })
                .collect()
        }
        (Scheme::Bobb, _) => return Err(Error::invalid("BOBB resamples block variables, not a raw series")),
        (_, _) => return Err(Error::invalid("MBB and NBB resample a raw series")),
    };
    BootstrapDistribution::new(samples, false)
}

/// Every one of the `N^b` equally likely MBB resamples, in odometer order.
pub fn exact_enumeration(
    x: &[f64],
    ell: usize,
    statistic: &str,
    registry: &StatisticRegistry,
) -> Result<BootstrapDistribution> {
    let cfg = divisible(x.len(), ell, "exact enumeration")?;
    let stat = registry.get(statistic)?;
    let outcomes = (cfg.n_blocks as u128).checked_pow(cfg.b as u32).unwrap_or(u128::MAX);
    if outcomes > ENUMERATION_CAP as u128 {
        return Err(Error::EnumerationCap { outcomes, cap: ENUMERATION_CAP });
    }
    let ctx = StatContext { n: cfg.n, block_len: ell, center: mbb_conditional_mean(x, ell)? };
    let mut idx = vec![0usize; cfg.b];
    let mut buf = Vec::with_capacity(cfg.n);
    let mut samples = Vec::with_capacity(outcomes as usize);
    loop {
        buf.clear();
        for &i in &idx {
            buf.extend_from_slice(&x[i..i + ell]);
        }
        samples.push(stat(&buf, &ctx));
        // advance the odometer, last position fastest
        let mut pos = cfg.b;
        loop {
            if pos == 0 {
                return BootstrapDistribution::new(samples, true);
            }
            pos -= 1;
            idx[pos] += 1;
            if idx[pos] < cfg.n_blocks {
                break;
            }
            idx[pos] = 0;
        }
    }
}

fn bobb_check(n_blocks: usize, ell1: usize) -> Result<usize> {
    if ell1 == 0 || ell1 > n_blocks {
        return Err(Error::invalid(format!("ell1 = {ell1} must lie in 1..={n_blocks}")));
    }
    if n_blocks % ell1 != 0 {
        return Err(Error::invalid(format!("BOBB needs ell1 | N (N = {n_blocks}, ell1 = {ell1})")));
    }
    Ok(n_blocks / ell1)
}

fn bobb_fill(y: &[f64], ell1: usize, stream: &mut Stream, out: &mut Vec<f64>) {
    out.clear();
    let starts = y.len() - ell1 + 1;
    for _ in 0..y.len() / ell1 {
        let i = stream.random_range(0..starts);
        out.extend_from_slice(&y[i..i + ell1]);
    }
}

/// Resample `b₁ = N/ℓ₁` runs of ℓ₁ consecutive block variables.
pub fn bobb_resample(y: &[f64], ell1: usize, stream: &mut Stream, out: &mut Vec<f64>) -> Result<()> {
    bobb_check(y.len(), ell1)?;
    bobb_fill(y, ell1, stream, out);
    Ok(())
}

/// `E_* Ȳ*`: the average ℓ₁-run mean over all `N - ℓ₁ + 1` starts.
pub fn bobb_expected_mean(y: &[f64], ell1: usize) -> Result<f64> {
    bobb_check(y.len(), ell1)?;
    Ok(mean(&moving_block_means(y, ell1)))
}

/// `T* = √b₁ (Ȳ* - E_*Ȳ*) / σ*` with
/// `σ*² = max{1/n, b₁^{-1} Σ_i (Ȳ*_i - Ȳ*)²}` over the ℓ₁-run means.
pub fn bobb_studentized(y_star: &[f64], ell1: usize, e_star: f64, n: usize) -> StudentizedStat {
    let means: Vec<f64> = y_star.chunks_exact(ell1).map(mean).collect();
    studentize_run_means(&means, e_star, n)
}

fn studentize_run_means(means: &[f64], e_star: f64, n: usize) -> StudentizedStat {
    let b1 = means.len() as f64;
    let m = mean(means);
    let raw = means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / b1;
    let floor = 1.0 / n as f64;
    let variance = if raw >= floor {
        VarianceEstimate { value: raw, method: VarianceMethod::Nbb, truncated: false }
    } else {
        VarianceEstimate { value: floor, method: VarianceMethod::Nbb, truncated: true }
    };
    let numerator = b1.sqrt() * (m - e_star);
    let denominator = variance.value.sqrt();
    StudentizedStat { value: numerator / denominator, numerator, denominator, variance }
}

/// Precomputed state for many BOBB replicates of `T*` on one sample.
///
/// A resampled run's mean is one of the precomputed ℓ₁-run means, so each
/// replicate costs O(b₁) instead of O(N).
#[derive(Clone, Debug)]
pub struct BobbEngine {
    run_means: Vec<f64>,
    b1: usize,
    n: usize,
    e_star: f64,
}

impl BobbEngine {
    pub fn new(blockvars: &BlockVariables, ell1: usize) -> Result<Self> {
        let b1 = bobb_check(blockvars.values.len(), ell1)?;
        let run_means = moving_block_means(&blockvars.values, ell1);
        let e_star = mean(&run_means);
        Ok(Self { run_means, b1, n: blockvars.config.n, e_star })
    }

    pub fn e_star(&self) -> f64 {
        self.e_star
    }

    /// One draw of `T*`. Consumes exactly `b₁` index draws from `stream`, the
    /// same indices [`bobb_resample`] would draw.
    pub fn replicate(&self, stream: &mut Stream, scratch: &mut Vec<f64>) -> f64 {
        scratch.clear();
        let starts = self.run_means.len();
        for _ in 0..self.b1 {
            scratch.push(self.run_means[stream.random_range(0..starts)]);
        }
        studentize_run_means(scratch, self.e_star, self.n).value
    }

    /// `B` replicates on child streams of `seed` in the given namespace.
    pub fn distribution(&self, replicates: usize, seed: u64, namespace: &str) -> Result<BootstrapDistribution> {
        let samples: Vec<f64> = (0..replicates)
            .into_par_iter()
            .map_init(Vec::new, |buf, r| {
                let mut s = rng::child_stream(seed, namespace, r as u64);
                self.replicate(&mut s, buf)
            })
            .collect();
        BootstrapDistribution::new(samples, false)
    }
}
