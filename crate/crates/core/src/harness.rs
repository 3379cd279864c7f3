//! Monte Carlo experiment runner: distance and tail statistics, the flat
//! key-value experiment config, the four experiment pipelines and result
//! persistence.
//!
//! Seeding: ladder point `i` draws side computations from
//! `child_seed(master, "side", i)`. Row `(n, g)` of experiment `e` uses
//! `child_seed(master, "e/outer/n=<n>", g)` for the outer replicates (and
//! `inner`, `heldout` likewise), with replicate `r` on
//! `child_stream(row_seed, "replicate", r)`. The soc experiment estimates one
//! population law per n (outer group index 0) and varies only the held-out
//! path and the bootstrap draws by group. Nothing else touches the master
//! seed, so any row can be recomputed alone.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::blocks::{self, BlockConfig, BlockFunctional};
use crate::edgeworth::{std_normal_cdf, StudentizedCdf, StudentizedEEParams};
use crate::error::{Error, Result};
use crate::estimators::{self, block_mean_side_mc};
use crate::procgen::{Innovation, LinearProcessSpec, MDependentSpec, ProcessSpec, WindowMap};
use crate::resample::BobbEngine;
use crate::rng;

/// Configs above this many estimated scalar operations need `allow_large`.
pub const OP_BUDGET: f64 = 1e10;

const RATE_NOTE: &str = "Rates in the underlying limit theorems carry (log n)^-2 factors \
that cannot be separated from constants at these sample sizes; rows support direction and \
ordering checks only.";

/// `sup_x |F_R(x) - F(x)|` for the empirical CDF of `samples`, evaluated
/// exactly at the jumps.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], reference_cdf: F) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("KS distance needs at least one sample"));
    }
    if samples.iter().any(|v| v.is_nan()) {
        return Err(Error::invalid("KS distance got a NaN sample"));
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let r = s.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in s.iter().enumerate() {
        let f = reference_cdf(x);
        d = d.max((((i + 1) as f64) / r - f).abs()).max((i as f64 / r - f).abs());
    }
    Ok(d.min(1.0))
}

/// `sup_x |F_a(x) - F_b(x)|` between two empirical CDFs.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::invalid("two-sample KS needs both samples non-empty"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::invalid("two-sample KS got a NaN sample"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d: f64 = 0.0;
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    // after one side is exhausted the other CDF only climbs towards 1
    if i < a.len() {
        d = d.max(1.0 - i as f64 / na);
    }
    if j < b.len() {
        d = d.max(1.0 - j as f64 / nb);
    }
    Ok(d)
}

/// Sample mean of `(1 + |S|^{s₀}) 1(|S| > [(s-2) λ log n]^{1/2})` with
/// `s₀ = 2⌊s/2⌋`. Vector-valued statistics are passed as their norms.
pub fn moderate_deviation_stat(samples: &[f64], s: usize, lambda: f64, n: usize) -> Result<f64> {
    if s < 3 {
        return Err(Error::invalid("moderate deviation order s must be at least 3"));
    }
    if !(lambda > 0.0) {
        return Err(Error::invalid("lambda must be positive"));
    }
    if samples.is_empty() {
        return Err(Error::invalid("moderate deviation statistic needs samples"));
    }
    let thr = deviation_threshold(s, lambda, n);
    let s0 = (2 * (s / 2)) as i32;
    let total: f64 = samples
        .iter()
        .map(|v| v.abs())
        .filter(|&a| a > thr)
        .map(|a| 1.0 + a.powi(s0))
        .sum();
    Ok(total / samples.len() as f64)
}

pub fn deviation_threshold(s: usize, lambda: f64, n: usize) -> f64 {
    ((s as f64 - 2.0) * lambda * (n as f64).ln()).sqrt()
}

/// `h_s(u) = u^s [log(1 + u)]^{2s²}`.
pub fn h_s(u: f64, s: usize) -> f64 {
    u.powi(s as i32) * u.ln_1p().powi(2 * (s * s) as i32)
}

/// Sample mean of `h_s(|v|)`.
pub fn moment_diagnostic_hs(values: &[f64], s: usize) -> Result<f64> {
    if s < 3 {
        return Err(Error::invalid("moment diagnostic order s must be at least 3"));
    }
    if values.is_empty() {
        return Ok(0.0);
    }
    Ok(values.iter().map(|v| h_s(v.abs(), s)).sum::<f64>() / values.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Ee,
    Soc,
    Mdev,
    Mbbmom,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Ee => "ee",
            ExperimentKind::Soc => "soc",
            ExperimentKind::Mdev => "mdev",
            ExperimentKind::Mbbmom => "mbbmom",
        }
    }

    fn default_statistic(self) -> &'static str {
        match self {
            ExperimentKind::Ee => "studentized-mean",
            ExperimentKind::Soc => "periodogram",
            ExperimentKind::Mdev => "mean",
            ExperimentKind::Mbbmom => "mbb-moment",
        }
    }

    fn statistics(self) -> &'static [&'static str] {
        match self {
            ExperimentKind::Ee => &["studentized-mean"],
            ExperimentKind::Soc => &["periodogram", "scaled-sum", "power"],
            ExperimentKind::Mdev => &["mean", "scaled-sum"],
            ExperimentKind::Mbbmom => &["mbb-moment", "mbb-variance"],
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "ee" => Ok(ExperimentKind::Ee),
            "soc" => Ok(ExperimentKind::Soc),
            "mdev" => Ok(ExperimentKind::Mdev),
            "mbbmom" => Ok(ExperimentKind::Mbbmom),
            other => Err(Error::invalid(format!("unknown experiment `{other}`"))),
        }
    }
}

/// How ℓ follows n.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum BlockRule {
    /// `⌈β₀ n^{1/3}⌉`; raised to the next divisor of `n` when the pipeline needs `ℓ | n`.
    CubeRoot { beta0: f64 },
    /// `⌈c n^{1/5}⌉`.
    FifthRoot { c: f64 },
    /// One ℓ per ladder entry.
    Explicit { ells: Vec<usize> },
}

/// How ℓ₁ follows n; the result must divide `N = n - ℓ + 1`.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Ell1Rule {
    /// Smallest divisor of `N` that is at least `⌈c n^p⌉`.
    Root { c: f64, p: f64 },
    Explicit { ell1s: Vec<usize> },
}

/// What the deviation multiplier `lambda` is scaled by.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum LambdaRef {
    /// `λ` is used as given.
    One,
    /// The long-run variance of the process.
    SigmaInf,
    /// Largest eigenvalue of the covariance of the statistic, from a pilot
    /// run at the largest ladder n.
    Pilot,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub process: ProcessSpec,
    pub statistic: String,
    pub n_ladder: Vec<usize>,
    pub block_rule: BlockRule,
    pub ell1_rule: Option<Ell1Rule>,
    pub replicates: usize,
    pub bootstrap_replicates: usize,
    pub seed_groups: usize,
    pub s: usize,
    pub lambda: f64,
    pub lambda_ref: LambdaRef,
    pub ee_order: usize,
    pub nu: u32,
    pub omega: f64,
    pub side_replicates: usize,
    pub pilot_replicates: usize,
    pub master_seed: u64,
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    let t = v.trim();
    let pi_form = t.strip_prefix("pi").map(|rest| {
        if rest.is_empty() {
            Some(PI)
        } else {
            rest.strip_prefix('/').and_then(|d| d.trim().parse::<f64>().ok()).map(|d| PI / d)
        }
    });
    match pi_form {
        Some(Some(x)) => Ok(x),
        Some(None) => Err(Error::Parse(format!("{key}: cannot read `{t}`"))),
        None => t.parse().map_err(|_| Error::Parse(format!("{key}: `{t}` is not a number"))),
    }
}

fn parse_int<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::Parse(format!("{key}: `{}` is not a non-negative integer", v.trim())))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|p| parse_int(key, p)).collect()
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn render_map(m: &WindowMap) -> String {
    match m {
        WindowMap::First => "first".into(),
        WindowMap::Sum => "sum".into(),
        WindowMap::Product => "product".into(),
        WindowMap::Constant(c) => format!("constant:{c}"),
    }
}

impl FromStr for BlockRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        match kind {
            "cube-root" => Ok(BlockRule::CubeRoot { beta0: if arg.is_empty() { 1.0 } else { parse_f64("block_rule", arg)? } }),
            "fifth-root" => Ok(BlockRule::FifthRoot { c: if arg.is_empty() { 1.0 } else { parse_f64("block_rule", arg)? } }),
            "explicit" => Ok(BlockRule::Explicit { ells: parse_list("block_rule", arg)? }),
            other => Err(Error::Parse(format!("unknown block rule `{other}`"))),
        }
    }
}

impl BlockRule {
    fn render(&self) -> String {
        match self {
            BlockRule::CubeRoot { beta0 } => format!("cube-root:{beta0}"),
            BlockRule::FifthRoot { c } => format!("fifth-root:{c}"),
            BlockRule::Explicit { ells } => format!("explicit:{}", join(ells)),
        }
    }

    /// ℓ for ladder entry `idx`; `need_divisor` raises it to a divisor of `n`.
    pub fn ell(&self, n: usize, idx: usize, need_divisor: bool) -> Result<usize> {
        let ell = match self {
            BlockRule::CubeRoot { beta0 } => {
                let target = (beta0 * (n as f64).cbrt()).ceil().max(1.0) as usize;
                if need_divisor {
                    smallest_divisor_at_least(n, target)
                } else {
                    target
                }
            }
            BlockRule::FifthRoot { c } => (c * (n as f64).powf(0.2)).ceil().max(1.0) as usize,
            BlockRule::Explicit { ells } => *ells
                .get(idx)
                .ok_or_else(|| Error::invalid("explicit block rule is shorter than the n-ladder"))?,
        };
        if ell == 0 || ell > n {
            return Err(Error::invalid(format!("block length {ell} does not fit n = {n}")));
        }
        if need_divisor && n % ell != 0 {
            return Err(Error::invalid(format!("this pipeline needs ell | n (n = {n}, ell = {ell})")));
        }
        Ok(ell)
    }
}

impl FromStr for Ell1Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, arg) = s.trim().split_once(':').unwrap_or((s.trim(), ""));
        match kind {
            "root" => {
                let (c, p) = arg
                    .split_once(':')
                    .ok_or_else(|| Error::Parse("ell1_rule root needs `root:<c>:<p>`".into()))?;
                Ok(Ell1Rule::Root { c: parse_f64("ell1_rule", c)?, p: parse_f64("ell1_rule", p)? })
            }
            "explicit" => Ok(Ell1Rule::Explicit { ell1s: parse_list("ell1_rule", arg)? }),
            other => Err(Error::Parse(format!("unknown ell1 rule `{other}`"))),
        }
    }
}

impl Ell1Rule {
    fn render(&self) -> String {
        match self {
            Ell1Rule::Root { c, p } => format!("root:{c}:{p}"),
            Ell1Rule::Explicit { ell1s } => format!("explicit:{}", join(ell1s)),
        }
    }

    pub fn ell1(&self, n: usize, n_blocks: usize, idx: usize) -> Result<usize> {
        let ell1 = match self {
            Ell1Rule::Root { c, p } => {
                let target = (c * (n as f64).powf(*p)).ceil().max(1.0) as usize;
                smallest_divisor_at_least(n_blocks, target)
            }
            Ell1Rule::Explicit { ell1s } => *ell1s
                .get(idx)
                .ok_or_else(|| Error::invalid("explicit ell1 rule is shorter than the n-ladder"))?,
        };
        if ell1 == 0 || n_blocks % ell1 != 0 {
            return Err(Error::invalid(format!("ell1 = {ell1} must divide N = {n_blocks}")));
        }
        if n_blocks / ell1 < 2 {
            return Err(Error::invalid(format!("ell1 = {ell1} leaves fewer than two runs of N = {n_blocks}")));
        }
        Ok(ell1)
    }
}

pub fn smallest_divisor_at_least(n: usize, target: usize) -> usize {
    (target.max(1)..=n).find(|d| n % d == 0).unwrap_or(n)
}

const KEYS: &[&str] = &[
    "experiment",
    "process.kind",
    "process.coeffs",
    "process.m0",
    "process.map",
    "process.innovation",
    "process.innov_variance",
    "statistic",
    "n_ladder",
    "block_rule",
    "ell1_rule",
    "replicates",
    "bootstrap_replicates",
    "seed_groups",
    "s",
    "lambda",
    "lambda_ref",
    "ee_order",
    "nu",
    "omega",
    "side_replicates",
    "pilot_replicates",
    "master_seed",
];

impl ExperimentConfig {
    /// Parse the `key = value` format; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = std::collections::BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("line {}: expected `key = value`", i + 1)))?;
            let k = k.trim();
            if !KEYS.contains(&k) {
                return Err(Error::Parse(format!("line {}: unknown key `{k}`", i + 1)));
            }
            if kv.insert(k.to_string(), v.trim().to_string()).is_some() {
                return Err(Error::Parse(format!("line {}: duplicate key `{k}`", i + 1)));
            }
        }
        let get = |k: &str| kv.get(k).map(String::as_str);
        let req = |k: &str| get(k).ok_or_else(|| Error::Parse(format!("missing key `{k}`")));

        let experiment: ExperimentKind = req("experiment")?.parse()?;
        let innov: Innovation = get("process.innovation").unwrap_or("normal").parse()?;
        let innov_variance = get("process.innov_variance").map(|v| parse_f64("process.innov_variance", v)).transpose()?.unwrap_or(1.0);
        let process = match req("process.kind")? {
            "linear" => {
                let coeffs = req("process.coeffs")?
                    .split(',')
                    .map(|c| parse_f64("process.coeffs", c))
                    .collect::<Result<Vec<_>>>()?;
                ProcessSpec::Linear(LinearProcessSpec { coeffs, innov, innov_variance })
            }
            "m-dependent" => ProcessSpec::MDependent(MDependentSpec {
                m0: parse_int("process.m0", req("process.m0")?)?,
                map: req("process.map")?.parse()?,
                innov,
                innov_variance,
            }),
            other => return Err(Error::Parse(format!("unknown process kind `{other}`"))),
        };
        let int_or = |k: &str, d: usize| -> Result<usize> { get(k).map(|v| parse_int(k, v)).transpose().map(|o| o.unwrap_or(d)) };
        let default_lambda_ref = match experiment {
            ExperimentKind::Mdev => "sigma-inf",
            ExperimentKind::Mbbmom => "pilot",
            _ => "one",
        };
        let cfg = Self {
            experiment,
            process,
            statistic: get("statistic").unwrap_or(experiment.default_statistic()).to_string(),
            n_ladder: parse_list("n_ladder", req("n_ladder")?)?,
            block_rule: get("block_rule").unwrap_or(match experiment {
                ExperimentKind::Soc => "fifth-root:1",
                _ => "cube-root:1",
            }).parse()?,
            ell1_rule: get("ell1_rule").map(str::parse).transpose()?,
            replicates: parse_int("replicates", req("replicates")?)?,
            bootstrap_replicates: int_or("bootstrap_replicates", 1)?,
            seed_groups: int_or("seed_groups", 1)?,
            s: int_or("s", 3)?,
            lambda: get("lambda").map(|v| parse_f64("lambda", v)).transpose()?.unwrap_or(1.0),
            lambda_ref: match get("lambda_ref").unwrap_or(default_lambda_ref) {
                "one" => LambdaRef::One,
                "sigma-inf" => LambdaRef::SigmaInf,
                "pilot" => LambdaRef::Pilot,
                other => return Err(Error::Parse(format!("unknown lambda_ref `{other}`"))),
            },
            ee_order: int_or("ee_order", 2)?,
            nu: int_or("nu", 2)? as u32,
            omega: get("omega").map(|v| parse_f64("omega", v)).transpose()?.unwrap_or(PI / 2.0),
            side_replicates: int_or("side_replicates", 100_000)?,
            pilot_replicates: int_or("pilot_replicates", 10_000)?,
            master_seed: parse_int("master_seed", req("master_seed")?)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every field, defaults resolved, in a fixed order. Parsing the output
    /// gives back an identical config.
    pub fn to_text(&self) -> String {
        let mut t = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(t, "{k} = {v}");
        };
        put("experiment", self.experiment.name().into());
        match &self.process {
            ProcessSpec::Linear(l) => {
                put("process.kind", "linear".into());
                put("process.coeffs", join(&l.coeffs));
                put("process.innovation", l.innov.name().into());
                put("process.innov_variance", l.innov_variance.to_string());
            }
            ProcessSpec::MDependent(m) => {
                put("process.kind", "m-dependent".into());
                put("process.m0", m.m0.to_string());
                put("process.map", render_map(&m.map));
                put("process.innovation", m.innov.name().into());
                put("process.innov_variance", m.innov_variance.to_string());
            }
        }
        put("statistic", self.statistic.clone());
        put("n_ladder", join(&self.n_ladder));
        put("block_rule", self.block_rule.render());
        if let Some(r) = &self.ell1_rule {
            put("ell1_rule", r.render());
        }
        put("replicates", self.replicates.to_string());
        put("bootstrap_replicates", self.bootstrap_replicates.to_string());
        put("seed_groups", self.seed_groups.to_string());
        put("s", self.s.to_string());
        put("lambda", self.lambda.to_string());
        put(
            "lambda_ref",
            match self.lambda_ref {
                LambdaRef::One => "one",
                LambdaRef::SigmaInf => "sigma-inf",
                LambdaRef::Pilot => "pilot",
            }
            .into(),
        );
        put("ee_order", self.ee_order.to_string());
        put("nu", self.nu.to_string());
        put("omega", self.omega.to_string());
        put("side_replicates", self.side_replicates.to_string());
        put("pilot_replicates", self.pilot_replicates.to_string());
        put("master_seed", self.master_seed.to_string());
        t
    }

    /// SHA-256 of [`Self::to_text`], hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_text().as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.process.validate()?;
        if self.n_ladder.is_empty() {
            return Err(Error::invalid("n_ladder must not be empty"));
        }
        if self.n_ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("n_ladder must be strictly increasing"));
        }
        if self.replicates < 1 || self.bootstrap_replicates < 1 || self.seed_groups < 1 {
            return Err(Error::invalid("replicates, bootstrap_replicates and seed_groups must be at least 1"));
        }
        if !self.experiment.statistics().contains(&self.statistic.as_str()) {
            return Err(Error::invalid(format!(
                "statistic `{}` is not available for experiment {} (choose from {})",
                self.statistic,
                self.experiment.name(),
                self.experiment.statistics().join(", ")
            )));
        }
        if self.s < 3 {
            return Err(Error::invalid("s must be at least 3"));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(Error::invalid("lambda must be positive"));
        }
        if !(1..=2).contains(&self.ee_order) {
            return Err(Error::invalid("ee_order must be 1 or 2"));
        }
        if self.nu == 0 {
            return Err(Error::invalid("nu must be at least 1"));
        }
        if !(self.omega.is_finite() && self.omega.abs() <= PI) {
            return Err(Error::invalid("omega must lie in [-pi, pi]"));
        }
        if self.side_replicates < 2 || self.pilot_replicates < 2 {
            return Err(Error::invalid("side and pilot runs need at least 2 replicates"));
        }
        if self.experiment == ExperimentKind::Soc && self.ell1_rule.is_none() {
            return Err(Error::invalid("soc experiments need an ell1_rule"));
        }
        if self.process.truth().sigma_inf_sq <= 0.0 && self.experiment != ExperimentKind::Mbbmom {
            return Err(Error::invalid("process has zero long-run variance"));
        }
        for (i, &n) in self.n_ladder.iter().enumerate() {
            PointPlan::geometry(self, i, n)?;
        }
        Ok(())
    }

    /// Rough scalar-operation count of a full run.
    pub fn estimated_ops(&self) -> f64 {
        let per_value = match &self.process {
            ProcessSpec::Linear(l) => l.coeffs.len() as f64 + 12.0,
            ProcessSpec::MDependent(m) => m.m0 as f64 + 12.0,
        };
        let groups = self.seed_groups as f64;
        let r = self.replicates as f64;
        let mut ops = 0.0;
        for (i, &n) in self.n_ladder.iter().enumerate() {
            let nf = n as f64;
            let gen = nf * per_value;
            let ell = PointPlan::geometry(self, i, n).map(|g| g.0).unwrap_or(1) as f64;
            ops += match self.experiment {
                ExperimentKind::Ee => groups * r * (gen + 4.0 * nf),
                ExperimentKind::Soc => {
                    r * (gen + nf * (12.0 + 2.0 * ell)) + groups * (gen + self.bootstrap_replicates as f64 * nf / ell)
                }
                ExperimentKind::Mdev | ExperimentKind::Mbbmom => groups * r * (gen + 4.0 * nf),
            };
            if self.experiment == ExperimentKind::Mbbmom && self.statistic == "mbb-variance" {
                ops += self.side_replicates as f64 * (gen + 4.0 * nf);
            }
        }
        if self.lambda_ref == LambdaRef::Pilot {
            let n = *self.n_ladder.last().unwrap() as f64;
            ops += self.pilot_replicates as f64 * n * (per_value + 4.0);
        }
        ops
    }
}

/// Constants of one ladder entry, reported in the result.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LadderPoint {
    pub n: usize,
    pub ell: usize,
    pub ell1: Option<usize>,
    /// `⌈n/ℓ⌉`.
    pub b: usize,
    /// Population centering of the statistic (`EȲ`, `EU^ν`, `Eσ̂²`).
    pub centering: Option<f64>,
    pub centering_se: Option<f64>,
    pub centering_source: Option<String>,
    pub ee_params: Option<StudentizedEEParams>,
}

struct PointPlan {
    point: LadderPoint,
    functional: Option<BlockFunctional>,
    ee_cdf: Option<StudentizedCdf>,
}

impl PointPlan {
    /// `(ℓ, ℓ₁)` for ladder entry `idx`.
    fn geometry(cfg: &ExperimentConfig, idx: usize, n: usize) -> Result<(usize, Option<usize>)> {
        let need_divisor = cfg.experiment == ExperimentKind::Ee;
        let ell = cfg.block_rule.ell(n, idx, need_divisor)?;
        let cfgb = BlockConfig::new(n, ell)?;
        if cfg.experiment == ExperimentKind::Soc {
            if 2 * ell + 1 > cfgb.n_blocks {
                return Err(Error::invalid(format!("lag-window studentization needs 2 ell <= N - 1 at n = {n}")));
            }
            let ell1 = cfg.ell1_rule.as_ref().expect("validated").ell1(n, cfgb.n_blocks, idx)?;
            return Ok((ell, Some(ell1)));
        }
        if cfg.experiment == ExperimentKind::Ee && n / ell < 2 {
            return Err(Error::invalid(format!("ell = {ell} leaves fewer than two blocks at n = {n}")));
        }
        Ok((ell, None))
    }

    fn new(cfg: &ExperimentConfig, idx: usize) -> Result<Self> {
        let n = cfg.n_ladder[idx];
        let (ell, ell1) = Self::geometry(cfg, idx, n)?;
        let side_seed = rng::child_seed(cfg.master_seed, "side", idx as u64);
        let mut point = LadderPoint {
            n,
            ell,
            ell1,
            b: n.div_ceil(ell),
            centering: None,
            centering_se: None,
            centering_source: None,
            ee_params: None,
        };
        let mut set_centering = |(v, se, src): (f64, Option<f64>, &str)| {
            point.centering = Some(v);
            point.centering_se = se;
            point.centering_source = Some(src.to_string());
        };
        let mut functional = None;
        let mut ee_cdf = None;
        let st = cfg.statistic.as_str();
        match cfg.experiment {
            ExperimentKind::Ee => {
                let params = match cfg.process.as_linear() {
                    Some(lin) => StudentizedEEParams::analytic(&lin, n, ell)?,
                    None => StudentizedEEParams::monte_carlo(&cfg.process, n, ell, cfg.side_replicates, side_seed)?,
                };
                ee_cdf = Some(StudentizedCdf::new(&params, cfg.ee_order)?);
                point.ee_params = Some(params);
            }
            ExperimentKind::Soc => {
                let f = match st {
                    "periodogram" => BlockFunctional::Periodogram { omega: cfg.omega },
                    "scaled-sum" => BlockFunctional::ScaledSum,
                    _ => BlockFunctional::Power { nu: cfg.nu },
                };
                f.validate(ell)?;
                set_centering(block_centering(cfg, &f, ell, side_seed)?);
                functional = Some(f);
            }
            ExperimentKind::Mdev => {
                if st == "scaled-sum" {
                    let f = BlockFunctional::Power { nu: cfg.nu };
                    set_centering(block_centering(cfg, &f, ell, side_seed)?);
                    functional = Some(f);
                }
            }
            ExperimentKind::Mbbmom => {
                if st == "mbb-moment" {
                    let f = BlockFunctional::Power { nu: cfg.nu };
                    set_centering(block_centering(cfg, &f, ell, side_seed)?);
                    functional = Some(f);
                } else {
                    set_centering(mbb_variance_side_mc(cfg, n, ell, side_seed)?);
                }
            }
        }
        Ok(Self { point, functional, ee_cdf })
    }

    /// The statistic on one path; `dim` entries of the returned array are used.
    fn eval(&self, cfg: &ExperimentConfig, x: &[f64], y: &mut Vec<f64>) -> Result<[f64; 2]> {
        let p = &self.point;
        let nf = p.n as f64;
        Ok(match cfg.experiment {
            ExperimentKind::Ee => [estimators::studentized_mean(x, p.ell, 0.0)?.value, 0.0],
            ExperimentKind::Soc => {
                let f = self.functional.as_ref().expect("soc has a functional");
                blocks::fill_block_values(x, p.ell, f, y);
                let cfgb = BlockConfig::new(p.n, p.ell)?;
                let var = estimators::lag_window_unchecked(y, &cfgb);
                let ybar = y.iter().sum::<f64>() / y.len() as f64;
                [(p.b as f64).sqrt() * (ybar - p.centering.unwrap_or(0.0)) / var.value.sqrt(), 0.0]
            }
            ExperimentKind::Mdev => {
                let s1 = x.iter().sum::<f64>() / nf.sqrt();
                match &self.functional {
                    None => [s1, 0.0],
                    Some(f) => {
                        blocks::fill_block_values(x, p.ell, f, y);
                        let c = p.centering.unwrap_or(0.0);
                        let s2 = y.iter().map(|v| v - c).sum::<f64>() / (nf * p.ell as f64).sqrt();
                        [s1, s2]
                    }
                }
            }
            ExperimentKind::Mbbmom => {
                let c = p.centering.unwrap_or(0.0);
                let root_b = (p.b as f64).sqrt();
                if self.functional.is_some() {
                    [root_b * (estimators::mbb_moment(x, p.ell, cfg.nu)? - c), 0.0]
                } else {
                    [root_b * nf * (estimators::mbb_variance(x, p.ell)?.value - c), 0.0]
                }
            }
        })
    }

    fn dim(&self, cfg: &ExperimentConfig) -> usize {
        if cfg.experiment == ExperimentKind::Mdev && self.functional.is_some() {
            2
        } else {
            1
        }
    }
}

/// `EY` for a block functional: closed forms where the truth allows,
/// otherwise a side Monte Carlo.
fn block_centering(
    cfg: &ExperimentConfig,
    f: &BlockFunctional,
    ell: usize,
    seed: u64,
) -> Result<(f64, Option<f64>, &'static str)> {
    let truth = cfg.process.truth();
    let gaussian = cfg.process.as_linear().is_some_and(|l| l.innov == Innovation::Normal);
    let v = truth.block_sum_variance(ell);
    let exact = match f {
        BlockFunctional::ScaledSum | BlockFunctional::Power { nu: 1 } => Some(0.0),
        BlockFunctional::Power { nu: 2 } => Some(v),
        BlockFunctional::Power { nu } if gaussian && nu % 2 == 1 => Some(0.0),
        BlockFunctional::Power { nu } if gaussian => {
            // E Z^{2k} = (2k - 1)!! v^k
            let k = (*nu / 2) as i32;
            Some((1..=k).map(|j| (2 * j - 1) as f64).product::<f64>() * v.powi(k))
        }
        BlockFunctional::Periodogram { omega } => Some(estimators::expected_periodogram(&truth, ell, *omega)),
        _ => None,
    };
    match exact {
        Some(c) => Ok((c, None, "analytic")),
        None => {
            let (m, se) = block_mean_side_mc(&cfg.process, ell, f, cfg.side_replicates, seed)?;
            Ok((m, Some(se), "side-monte-carlo"))
        }
    }
}

/// `E σ̂²_MBB` at `(n, ℓ)` by side Monte Carlo.
fn mbb_variance_side_mc(cfg: &ExperimentConfig, n: usize, ell: usize, seed: u64) -> Result<(f64, Option<f64>, &'static str)> {
    let reps = cfg.side_replicates;
    let vals = replicate_values(&cfg.process, n, reps, seed, "side-mc/mbb-variance", |x, _| {
        Ok(estimators::mbb_variance(x, ell)?.value)
    })?;
    let (m, se) = mean_se(&vals);
    Ok((m, Some(se), "side-monte-carlo"))
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let r = v.len() as f64;
    let m = v.iter().sum::<f64>() / r;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (r - 1.0).max(1.0);
    (m, (var / r).sqrt())
}

/// `reps` independent paths on `child_stream(seed, ns, r)`, results in
/// replicate order.
fn replicate_values<F>(spec: &ProcessSpec, n: usize, reps: usize, seed: u64, ns: &str, f: F) -> Result<Vec<f64>>
where
    F: Fn(&[f64], &mut Vec<f64>) -> Result<f64> + Sync,
{
    (0..reps)
        .into_par_iter()
        .map_init(
            || (spec.sampler(), Vec::with_capacity(n), Vec::new()),
            |(sampler, x, scratch), r| {
                let mut stream = rng::child_stream(seed, ns, r as u64);
                sampler.fill(&mut stream, n, x);
                f(x, scratch)
            },
        )
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct RowSeeds {
    pub outer: u64,
    pub inner: Option<u64>,
    pub heldout: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRow {
    pub n: usize,
    pub group: usize,
    pub ell: usize,
    pub ell1: Option<usize>,
    pub b: usize,
    pub seeds: RowSeeds,
    pub replicates: usize,
    /// KS distance of the replicate law from `Φ`.
    pub ks_normal: Option<f64>,
    pub ks_ee: Option<f64>,
    /// Two-sample KS distance between the replicate law and the bootstrap law.
    pub ks_boot: Option<f64>,
    pub sqrt_b_ks_boot: Option<f64>,
    pub mdev: Option<f64>,
    pub threshold: Option<f64>,
    pub exceedances: Option<usize>,
    /// Mean `h_s` over the replicate statistics.
    pub hs_diagnostic: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub n: usize,
    pub median_ks_normal: Option<f64>,
    pub median_ks_ee: Option<f64>,
    pub median_ks_boot: Option<f64>,
    pub median_sqrt_b_ks_boot: Option<f64>,
    pub median_mdev: Option<f64>,
    /// Seed groups with `ks_ee < ks_normal`.
    pub ee_wins: Option<usize>,
    /// Seed groups with `ks_boot < ks_normal`.
    pub boot_wins: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentResult {
    pub experiment: ExperimentKind,
    pub statistic: String,
    pub config_hash: String,
    pub code_version: String,
    pub master_seed: u64,
    pub seed_groups: usize,
    /// `λ` after scaling by `lambda_ref`.
    pub lambda_used: Option<f64>,
    pub lambda_pilot_n: Option<usize>,
    pub ladder: Vec<LadderPoint>,
    pub rows: Vec<ExperimentRow>,
    pub summary: Vec<SummaryRow>,
    pub note: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RowTiming {
    pub n: usize,
    pub group: usize,
    pub seconds: f64,
}

/// Shared per-run state: ladder plans and the scaled `λ`.
pub struct Prepared {
    plans: Vec<PointPlan>,
    lambda_used: Option<f64>,
    lambda_pilot_n: Option<usize>,
}

impl Prepared {
    pub fn new(cfg: &ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        let plans = (0..cfg.n_ladder.len()).map(|i| PointPlan::new(cfg, i)).collect::<Result<Vec<_>>>()?;
        let uses_lambda = matches!(cfg.experiment, ExperimentKind::Mdev | ExperimentKind::Mbbmom);
        let (lambda_used, lambda_pilot_n) = if !uses_lambda {
            (None, None)
        } else {
            match cfg.lambda_ref {
                LambdaRef::One => (Some(cfg.lambda), None),
                LambdaRef::SigmaInf => (Some(cfg.lambda * cfg.process.truth().sigma_inf_sq), None),
                LambdaRef::Pilot => {
                    let plan = plans.last().expect("non-empty ladder");
                    let top = pilot_eigenvalue(cfg, plan)?;
                    if !(top > 0.0) {
                        return Err(Error::invalid("pilot run found a degenerate statistic"));
                    }
                    (Some(cfg.lambda * top), Some(plan.point.n))
                }
            }
        };
        Ok(Self { plans, lambda_used, lambda_pilot_n })
    }

    pub fn ladder(&self) -> Vec<LadderPoint> {
        self.plans.iter().map(|p| p.point.clone()).collect()
    }

    pub fn lambda_used(&self) -> Option<f64> {
        self.lambda_used
    }
}

/// Largest eigenvalue of the sample covariance of the statistic.
fn pilot_eigenvalue(cfg: &ExperimentConfig, plan: &PointPlan) -> Result<f64> {
    let seed = rng::child_seed(cfg.master_seed, "pilot", 0);
    let n = plan.point.n;
    let obs: Vec<[f64; 2]> = (0..cfg.pilot_replicates)
        .into_par_iter()
        .map_init(
            || (cfg.process.sampler(), Vec::with_capacity(n), Vec::new()),
            |(sampler, x, y), r| {
                let mut stream = rng::child_stream(seed, "replicate", r as u64);
                sampler.fill(&mut stream, n, x);
                plan.eval(cfg, x, y)
            },
        )
        .collect::<Result<_>>()?;
    let r = obs.len() as f64;
    let m = obs.iter().fold([0.0; 2], |a, o| [a[0] + o[0] / r, a[1] + o[1] / r]);
    let (mut c11, mut c12, mut c22) = (0.0, 0.0, 0.0);
    for o in &obs {
        let (d1, d2) = (o[0] - m[0], o[1] - m[1]);
        c11 += d1 * d1;
        c12 += d1 * d2;
        c22 += d2 * d2;
    }
    let (c11, c12, c22) = (c11 / (r - 1.0), c12 / (r - 1.0), c22 / (r - 1.0));
    if plan.dim(cfg) == 1 {
        return Ok(c11);
    }
    let half_tr = 0.5 * (c11 + c22);
    Ok(half_tr + (0.25 * (c11 - c22).powi(2) + c12 * c12).sqrt())
}

fn row_seeds(cfg: &ExperimentConfig, n: usize, group: usize) -> RowSeeds {
    let e = cfg.experiment.name();
    let seed = |part: &str, g: usize| rng::child_seed(cfg.master_seed, &format!("{e}/{part}/n={n}"), g as u64);
    if cfg.experiment == ExperimentKind::Soc {
        // one population law per n, shared by every seed group
        RowSeeds { outer: seed("outer", 0), inner: Some(seed("inner", group)), heldout: Some(seed("heldout", group)) }
    } else {
        RowSeeds { outer: seed("outer", group), inner: None, heldout: None }
    }
}

/// The outer replicates of one row, reduced to scalars (norms for
/// vector statistics), in replicate order.
fn outer_values(cfg: &ExperimentConfig, plan: &PointPlan, outer_seed: u64) -> Result<Vec<f64>> {
    let n = plan.point.n;
    let dim = plan.dim(cfg);
    (0..cfg.replicates)
        .into_par_iter()
        .map_init(
            || (cfg.process.sampler(), Vec::with_capacity(n), Vec::new()),
            |(sampler, x, y), r| {
                let mut stream = rng::child_stream(outer_seed, "replicate", r as u64);
                sampler.fill(&mut stream, n, x);
                let o = plan.eval(cfg, x, y)?;
                Ok(if dim == 1 { o[0] } else { o[0].hypot(o[1]) })
            },
        )
        .collect()
}

/// Row `(ladder[idx], group)` given the shared state.
pub fn run_row_prepared(cfg: &ExperimentConfig, prep: &Prepared, idx: usize, group: usize) -> Result<ExperimentRow> {
    row_with_outer(cfg, prep, idx, group, None)
}

fn row_with_outer(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    idx: usize,
    group: usize,
    shared_outer: Option<&[f64]>,
) -> Result<ExperimentRow> {
    let plan = prep.plans.get(idx).ok_or_else(|| Error::invalid("ladder index out of range"))?;
    if group >= cfg.seed_groups {
        return Err(Error::invalid("seed group out of range"));
    }
    let p = &plan.point;
    let seeds = row_seeds(cfg, p.n, group);
    let owned;
    let values: &[f64] = match shared_outer {
        Some(v) => v,
        None => {
            owned = outer_values(cfg, plan, seeds.outer)?;
            &owned
        }
    };
    let mut row = ExperimentRow {
        n: p.n,
        group,
        ell: p.ell,
        ell1: p.ell1,
        b: p.b,
        seeds,
        replicates: cfg.replicates,
        ks_normal: None,
        ks_ee: None,
        ks_boot: None,
        sqrt_b_ks_boot: None,
        mdev: None,
        threshold: None,
        exceedances: None,
        hs_diagnostic: moment_diagnostic_hs(values, cfg.s)?,
    };
    match cfg.experiment {
        ExperimentKind::Ee => {
            row.ks_normal = Some(ks_distance(values, std_normal_cdf)?);
            let ee = plan.ee_cdf.expect("ee plan has an expansion");
            row.ks_ee = Some(ks_distance(values, |x| ee.cdf(x))?);
        }
        ExperimentKind::Soc => {
            row.ks_normal = Some(ks_distance(values, std_normal_cdf)?);
            let f = plan.functional.as_ref().expect("soc has a functional");
            let mut stream = rng::child_stream(seeds.heldout.expect("soc"), "path", 0);
            let mut x = Vec::with_capacity(p.n);
            cfg.process.sampler().fill(&mut stream, p.n, &mut x);
            let bv = blocks::eval_block_functional(&x, p.ell, f)?;
            let engine = BobbEngine::new(&bv, p.ell1.expect("soc has ell1"))?;
            let boot = engine.distribution(cfg.bootstrap_replicates, seeds.inner.expect("soc"), "replicate")?;
            let d = ks_two_sample(values, boot.sorted())?;
            row.ks_boot = Some(d);
            row.sqrt_b_ks_boot = Some((p.b as f64).sqrt() * d);
        }
        ExperimentKind::Mdev | ExperimentKind::Mbbmom => {
            let lambda = prep.lambda_used.expect("deviation experiments scale lambda");
            let thr = deviation_threshold(cfg.s, lambda, p.n);
            row.mdev = Some(moderate_deviation_stat(values, cfg.s, lambda, p.n)?);
            row.threshold = Some(thr);
            row.exceedances = Some(values.iter().filter(|v| v.abs() > thr).count());
        }
    }
    Ok(row)
}

/// Recompute a single row from the config alone.
pub fn run_row(cfg: &ExperimentConfig, idx: usize, group: usize) -> Result<ExperimentRow> {
    run_row_prepared(cfg, &Prepared::new(cfg)?, idx, group)
}

pub fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn summarize(cfg: &ExperimentConfig, rows: &[ExperimentRow]) -> Vec<SummaryRow> {
    cfg.n_ladder
        .iter()
        .map(|&n| {
            let at: Vec<&ExperimentRow> = rows.iter().filter(|r| r.n == n).collect();
            let med = |f: fn(&ExperimentRow) -> Option<f64>| {
                let mut v: Vec<f64> = at.iter().filter_map(|r| f(r)).collect();
                (!v.is_empty()).then(|| median(&mut v))
            };
            let wins = |f: fn(&ExperimentRow) -> Option<f64>| {
                at.iter()
                    .map(|r| f(r).zip(r.ks_normal).map(|(a, b)| usize::from(a < b)))
                    .sum::<Option<usize>>()
            };
            SummaryRow {
                n,
                median_ks_normal: med(|r| r.ks_normal),
                median_ks_ee: med(|r| r.ks_ee),
                median_ks_boot: med(|r| r.ks_boot),
                median_sqrt_b_ks_boot: med(|r| r.sqrt_b_ks_boot),
                median_mdev: med(|r| r.mdev),
                ee_wins: wins(|r| r.ks_ee),
                boot_wins: wins(|r| r.ks_boot),
            }
        })
        .collect()
}

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub result: ExperimentResult,
    pub timing: Vec<RowTiming>,
}

/// Run every `(n, group)` row. Refuses configs above [`OP_BUDGET`] unless
/// `allow_large`.
pub fn run_experiment(cfg: &ExperimentConfig, allow_large: bool) -> Result<RunOutput> {
    cfg.validate()?;
    let ops = cfg.estimated_ops();
    if ops > OP_BUDGET && !allow_large {
        return Err(Error::Budget { estimated: ops, limit: OP_BUDGET });
    }
    let prep = Prepared::new(cfg)?;
    let mut rows = Vec::new();
    let mut timing = Vec::new();
    for idx in 0..cfg.n_ladder.len() {
        let shared = match cfg.experiment {
            ExperimentKind::Soc => {
                let seed = row_seeds(cfg, cfg.n_ladder[idx], 0).outer;
                Some(outer_values(cfg, &prep.plans[idx], seed)?)
            }
            _ => None,
        };
        for group in 0..cfg.seed_groups {
            let t0 = Instant::now();
            rows.push(row_with_outer(cfg, &prep, idx, group, shared.as_deref())?);
            timing.push(RowTiming { n: cfg.n_ladder[idx], group, seconds: t0.elapsed().as_secs_f64() });
        }
    }
    let summary = summarize(cfg, &rows);
    let result = ExperimentResult {
        experiment: cfg.experiment,
        statistic: cfg.statistic.clone(),
        config_hash: cfg.hash(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        master_seed: cfg.master_seed,
        seed_groups: cfg.seed_groups,
        lambda_used: prep.lambda_used,
        lambda_pilot_n: prep.lambda_pilot_n,
        ladder: prep.ladder(),
        rows,
        summary,
        note: RATE_NOTE.to_string(),
    };
    Ok(RunOutput { result, timing })
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

fn opt_int<T: ToString>(v: Option<T>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn rows_csv(rows: &[ExperimentRow]) -> String {
    let mut s = String::from(
        "n,group,ell,ell1,b,outer_seed,inner_seed,heldout_seed,replicates,ks_normal,ks_ee,ks_boot,sqrt_b_ks_boot,mdev,threshold,exceedances,hs_diagnostic\n",
    );
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{:.16e}",
            r.n,
            r.group,
            r.ell,
            opt_int(r.ell1),
            r.b,
            r.seeds.outer,
            opt_int(r.seeds.inner),
            opt_int(r.seeds.heldout),
            r.replicates,
            opt(r.ks_normal),
            opt(r.ks_ee),
            opt(r.ks_boot),
            opt(r.sqrt_b_ks_boot),
            opt(r.mdev),
            opt(r.threshold),
            opt_int(r.exceedances),
            r.hs_diagnostic,
        );
    }
    s
}

/// Write `config.copy`, `result.json`, `rows.csv` and `timing.csv` into
/// `dir`. Wall times live only in `timing.csv` so `result.json` is
/// reproducible byte for byte.
pub fn persist(dir: &Path, cfg: &ExperimentConfig, out: &RunOutput) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.copy"), cfg.to_text())?;
    let mut json = serde_json::to_string_pretty(&out.result)?;
    json.push('\n');
    fs::write(dir.join("result.json"), json)?;
    fs::write(dir.join("rows.csv"), rows_csv(&out.result.rows))?;
    let mut t = fs::File::create(dir.join("timing.csv"))?;
    writeln!(t, "n,group,seconds")?;
    for r in &out.timing {
        writeln!(t, "{},{},{:.6}", r.n, r.group, r.seconds)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn brute_ks<F: Fn(f64) -> f64>(s: &[f64], f: F) -> f64 {
        let r = s.len() as f64;
        let mut d: f64 = 0.0;
        for &x in s {
            let le = s.iter().filter(|&&y| y <= x).count() as f64 / r;
            let lt = s.iter().filter(|&&y| y < x).count() as f64 / r;
            d = d.max((le - f(x)).abs()).max((lt - f(x)).abs());
        }
        d
    }

    fn brute_two_sample(a: &[f64], b: &[f64]) -> f64 {
        let ecdf = |s: &[f64], x: f64| s.iter().filter(|&&y| y <= x).count() as f64 / s.len() as f64;
        a.iter().chain(b).map(|&x| (ecdf(a, x) - ecdf(b, x)).abs()).fold(0.0, f64::max)
    }

    fn inv_normal(p: f64) -> f64 {
        // bisection is plenty for a test grid
        let (mut lo, mut hi) = (-10.0, 10.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if std_normal_cdf(mid) < p {
                lo = mid
            } else {
                hi = mid
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn ks_examples() {
        assert_eq!(ks_distance(&[0.0], std_normal_cdf).unwrap(), 0.5);
        assert!(ks_distance(&[], std_normal_cdf).is_err());
        let r = 999;
        let grid: Vec<f64> = (1..=r).map(|i| inv_normal(i as f64 / (r + 1) as f64)).collect();
        assert!(ks_distance(&grid, std_normal_cdf).unwrap() <= 1.0 / (r + 1) as f64 + 1e-9);
        let mut s = rng::stream(4);
        let draws: Vec<f64> = (0..10_000).map(|_| Innovation::Normal.draw(&mut s)).collect();
        assert!(ks_distance(&draws, std_normal_cdf).unwrap() < 1.63 / 100.0);
    }

    proptest! {
        #[test]
        fn ks_matches_brute_force(v in prop::collection::vec(-3.0f64..3.0, 1..100), tie in any::<bool>()) {
            let mut v = v;
            if tie && v.len() > 2 {
                v[1] = v[0];
            }
            let a = ks_distance(&v, std_normal_cdf).unwrap();
            prop_assert!((a - brute_ks(&v, std_normal_cdf)).abs() < 1e-12);
        }

        #[test]
        fn two_sample_matches_brute_force(a in prop::collection::vec(-2i32..3, 1..60), b in prop::collection::vec(-2i32..3, 1..60)) {
            let a: Vec<f64> = a.into_iter().map(f64::from).collect();
            let b: Vec<f64> = b.into_iter().map(f64::from).collect();
            let d = ks_two_sample(&a, &b).unwrap();
            prop_assert!((d - brute_two_sample(&a, &b)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&d));
        }

        #[test]
        fn hs_is_nondecreasing(s in 3usize..6, u in 0.0f64..20.0, du in 0.0f64..5.0) {
            prop_assert!(h_s(u + du, s) >= h_s(u, s));
        }
    }

    #[test]
    fn deviation_stat_examples() {
        assert_eq!(moderate_deviation_stat(&[0.1, -0.2], 3, 1.0, 100).unwrap(), 0.0);
        let c = 10.0;
        let v = moderate_deviation_stat(&[c, -c, c], 4, 1.0, 100).unwrap();
        assert!((v - (1.0 + c.powi(4))).abs() < 1e-9);
        // s = 5 still uses the even power 4
        let v = moderate_deviation_stat(&[c], 5, 1.0, 100).unwrap();
        assert!((v - (1.0 + c.powi(4))).abs() < 1e-9);
        assert!(moderate_deviation_stat(&[1.0], 2, 1.0, 100).is_err());
        assert!(moderate_deviation_stat(&[1.0], 3, 0.0, 100).is_err());
    }

    #[test]
    fn hs_examples() {
        assert_eq!(moment_diagnostic_hs(&[0.0, 0.0], 3).unwrap(), 0.0);
        let want = 2f64.ln().powi(18);
        assert!((moment_diagnostic_hs(&[1.0], 3).unwrap() - want).abs() < 1e-15 * want.max(1.0));
        assert!(moment_diagnostic_hs(&[1.0], 2).is_err());
    }

    #[test]
    fn divisor_snapping() {
        assert_eq!(smallest_divisor_at_least(6000, 19), 20);
        assert_eq!(smallest_divisor_at_least(3375, 15), 15);
        assert_eq!(smallest_divisor_at_least(13, 2), 13);
        let r = BlockRule::CubeRoot { beta0: 1.0 };
        assert_eq!(r.ell(1000, 0, true).unwrap(), 10);
        assert_eq!(r.ell(6000, 0, true).unwrap(), 20);
        assert_eq!(r.ell(6000, 0, false).unwrap(), 19);
    }

    const EE_CFG: &str = "
        # symmetric i.i.d.
        experiment = ee
        process.kind = linear
        process.coeffs = 1
        process.innovation = uniform
        n_ladder = 216, 512, 1000
        replicates = 300
        seed_groups = 2
        master_seed = 77
    ";

    #[test]
    fn config_round_trip_and_hash() {
        let c = ExperimentConfig::parse(EE_CFG).unwrap();
        let again = ExperimentConfig::parse(&c.to_text()).unwrap();
        assert_eq!(c, again);
        assert_eq!(c.hash(), again.hash());
        assert_eq!(c.hash().len(), 64);
        let mut other = c.clone();
        other.master_seed += 1;
        assert_ne!(c.hash(), other.hash());
        let pi = ExperimentConfig::parse(&EE_CFG.replace("master_seed = 77", "master_seed = 77\nomega = pi/3")).unwrap();
        assert_eq!(pi.omega, PI / 3.0);
    }

    #[test]
    fn config_validation() {
        let bad = |from: &str, to: &str| ExperimentConfig::parse(&EE_CFG.replace(from, to)).is_err();
        assert!(bad("216, 512, 1000", "512, 216"));
        assert!(bad("replicates = 300", "replicates = 0"));
        assert!(bad("master_seed = 77", "master_seed = 77\nbogus = 1"));
        assert!(bad("master_seed = 77", "master_seed = 77\nmaster_seed = 78"));
        assert!(bad("experiment = ee", "experiment = nope"));
        assert!(bad("master_seed = 77", "master_seed = 77\nstatistic = periodogram"));
        assert!(bad("n_ladder = 216, 512, 1000", "n_ladder = 216, 512, 1000\nblock_rule = explicit:7,8,10"));
    }

    #[test]
    fn soc_rejects_non_dividing_ell1() {
        let text = "
            experiment = soc
            process.kind = linear
            process.coeffs = 1, 0.5
            n_ladder = 1000
            block_rule = explicit:4
            ell1_rule = explicit:10
            replicates = 10
            master_seed = 1
        ";
        // N = 997 is prime
        assert!(matches!(ExperimentConfig::parse(text), Err(Error::Validation(_))));
        let ok = text.replace("block_rule = explicit:4", "block_rule = explicit:1");
        assert!(ExperimentConfig::parse(&ok).is_ok());
    }

    #[test]
    fn ee_rows_and_degenerate_expansion() {
        let c = ExperimentConfig::parse(EE_CFG).unwrap();
        let out = run_experiment(&c, false).unwrap();
        assert_eq!(out.result.rows.len(), 6);
        assert_eq!(out.result.summary.len(), 3);
        for r in &out.result.rows {
            // uniform i.i.d.: p₁ = p₂ = 0 so the two columns coincide
            assert_eq!(r.ks_ee, r.ks_normal);
            assert!((0.0..=1.0).contains(&r.ks_normal.unwrap()));
        }
        let row = run_row(&c, 1, 1).unwrap();
        assert_eq!(row, out.result.rows[3]);
    }

    #[test]
    fn budget_guard() {
        let c = ExperimentConfig::parse(&EE_CFG.replace("replicates = 300", "replicates = 100000000")).unwrap();
        assert!(matches!(run_experiment(&c, false), Err(Error::Budget { .. })));
    }

    #[test]
    fn iid_mean_deviation_decays() {
        let text = "
            experiment = mdev
            process.kind = linear
            process.coeffs = 1
            n_ladder = 500, 2000, 8000
            replicates = 20000
            seed_groups = 3
            lambda = 1.5
            master_seed = 5
        ";
        let c = ExperimentConfig::parse(text).unwrap();
        let out = run_experiment(&c, true).unwrap();
        assert_eq!(out.result.lambda_used, Some(1.5));
        let m: Vec<f64> = out.result.summary.iter().map(|s| s.median_mdev.unwrap()).collect();
        assert!(m[0] > m[1] && m[1] > m[2], "{m:?}");
    }

    #[test]
    fn gaussian_power_centering_matches_side_mc() {
        let mut rs = rng::stream(2);
        let coeffs = [1.0, rs.random_range(-0.9..0.9)];
        let text = format!(
            "experiment = mbbmom\nprocess.kind = linear\nprocess.coeffs = {}, {}\nn_ladder = 64\nreplicates = 10\nnu = 4\nmaster_seed = 3\n",
            coeffs[0], coeffs[1]
        );
        let c = ExperimentConfig::parse(&text).unwrap();
        let prep = Prepared::new(&c).unwrap();
        let p = &prep.ladder()[0];
        let f = BlockFunctional::Power { nu: 4 };
        let (m, se) = block_mean_side_mc(&c.process, p.ell, &f, 200_000, 9).unwrap();
        assert!((p.centering.unwrap() - m).abs() < 4.0 * se);
    }

    #[test]
    fn persisted_result_is_reproducible() {
        let c = ExperimentConfig::parse(EE_CFG).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a");
        let b = dir.path().join("b");
        persist(&a, &c, &run_experiment(&c, false).unwrap()).unwrap();
        let c2 = ExperimentConfig::parse(&fs::read_to_string(a.join("config.copy")).unwrap()).unwrap();
        persist(&b, &c2, &run_experiment(&c2, false).unwrap()).unwrap();
        assert_eq!(fs::read(a.join("result.json")).unwrap(), fs::read(b.join("result.json")).unwrap());
        assert_eq!(fs::read(a.join("rows.csv")).unwrap(), fs::read(b.join("rows.csv")).unwrap());
    }
}
