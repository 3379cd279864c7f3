//! Synthetic weakly dependent processes with closed-form second-order truth.
//!
//! Two families are provided: causal finite moving averages
//! `X_j = Σ_{i=0}^{J} a_i ε_{j-i}` and `m0`-dependent window maps
//! `X_i = h(ε_i, …, ε_{i+m0-1}) - E h`. Both are driven by i.i.d.
//! innovations from a fixed menu, scaled to the requested variance.

use std::f64::consts::PI;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Innovation law, always standardized to mean 0 and variance 1 before
/// scaling by `sqrt(innov_variance)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Innovation {
    /// Standard normal.
    Normal,
    /// Exp(1) shifted to mean zero. Skewed, third cumulant 2.
    CenteredExponential,
    /// Uniform on (-√3, √3).
    Uniform,
}

impl Innovation {
    /// One unit-variance draw.
    #[inline]
    pub fn draw<R: Rng + ?Sized>(self, rng: &mut R) -> f64 {
        match self {
            Innovation::Normal => rng.sample(StandardNormal),
            Innovation::CenteredExponential => {
                let e: f64 = rng.sample(Exp1);
                e - 1.0
            }
            Innovation::Uniform => (2.0 * rng.random::<f64>() - 1.0) * 3f64.sqrt(),
        }
    }

    /// Third cumulant of the unit-variance law.
    pub fn third_cumulant(self) -> f64 {
        match self {
            Innovation::CenteredExponential => 2.0,
            _ => 0.0,
        }
    }

    /// Fourth cumulant of the unit-variance law.
    pub fn fourth_cumulant(self) -> f64 {
        match self {
            Innovation::Normal => 0.0,
            Innovation::CenteredExponential => 6.0,
            Innovation::Uniform => -1.2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Innovation::Normal => "normal",
            Innovation::CenteredExponential => "exponential",
            Innovation::Uniform => "uniform",
        }
    }
}

impl FromStr for Innovation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "normal" | "gaussian" | "standard-normal" => Ok(Innovation::Normal),
            "exponential" | "exp" | "centered-exponential" => Ok(Innovation::CenteredExponential),
            "uniform" => Ok(Innovation::Uniform),
            other => Err(Error::invalid(format!("unknown innovation law `{other}`"))),
        }
    }
}

/// Finite causal moving average `X_j = Σ_{i=0}^{J} a_i ε_{j-i}`.
///
/// Two-sided sequences are supplied already folded to this one-sided form;
/// the shift does not change any second-order quantity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinearProcessSpec {
    pub coeffs: Vec<f64>,
    pub innov: Innovation,
    pub innov_variance: f64,
}

impl LinearProcessSpec {
    pub fn new(coeffs: Vec<f64>, innov: Innovation, innov_variance: f64) -> Result<Self> {
        let spec = Self { coeffs, innov, innov_variance };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.coeffs.is_empty() {
            return Err(Error::invalid("linear process needs at least one coefficient"));
        }
        if self.coeffs.iter().any(|a| !a.is_finite()) {
            return Err(Error::invalid("linear process coefficients must be finite"));
        }
        if self.coeffs.iter().sum::<f64>() == 0.0 {
            return Err(Error::invalid(
                "coefficients sum to zero; the long-run variance would vanish",
            ));
        }
        if !(self.innov_variance > 0.0 && self.innov_variance.is_finite()) {
            return Err(Error::invalid("innovation variance must be positive and finite"));
        }
        Ok(())
    }

    /// Highest lag `J`.
    pub fn order(&self) -> usize {
        self.coeffs.len() - 1
    }
}

/// Window map `h: R^{m0} -> R` applied to consecutive innovations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "map", content = "value")]
pub enum WindowMap {
    /// First coordinate of the window.
    First,
    /// Sum of the window.
    Sum,
    /// Product of the window.
    Product,
    /// A constant; the centered series is identically zero.
    Constant(f64),
}

impl FromStr for WindowMap {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if let Some(c) = s.strip_prefix("constant:") {
            let c: f64 = c
                .parse()
                .map_err(|_| Error::invalid(format!("bad constant in window map `{s}`")))?;
            return Ok(WindowMap::Constant(c));
        }
        match s.as_str() {
            "first" | "identity" => Ok(WindowMap::First),
            "sum" => Ok(WindowMap::Sum),
            "product" => Ok(WindowMap::Product),
            other => Err(Error::invalid(format!("unknown window map `{other}`"))),
        }
    }
}

/// `X_i = h(ε_i, …, ε_{i+m0-1}) - E h`, an `m0`-dependent process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MDependentSpec {
    pub m0: usize,
    pub map: WindowMap,
    pub innov: Innovation,
    pub innov_variance: f64,
}

impl MDependentSpec {
    pub fn new(m0: usize, map: WindowMap, innov: Innovation, innov_variance: f64) -> Result<Self> {
        let spec = Self { m0, map, innov, innov_variance };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m0 == 0 {
            return Err(Error::invalid("window length m0 must be at least 1"));
        }
        if !(self.innov_variance > 0.0 && self.innov_variance.is_finite()) {
            return Err(Error::invalid("innovation variance must be positive and finite"));
        }
        if let WindowMap::Constant(c) = self.map {
            if !c.is_finite() {
                return Err(Error::invalid("constant window map must be finite"));
            }
        }
        Ok(())
    }

    /// `E h(ε_1, …, ε_{m0})`. Every map in the menu has a closed form: the
    /// innovations are centered and independent, so sums and products have
    /// mean zero.
    pub fn centering_constant(&self) -> f64 {
        match self.map {
            WindowMap::Constant(c) => c,
            _ => 0.0,
        }
    }

    /// The equivalent moving average, when one exists.
    pub fn as_linear(&self) -> Option<LinearProcessSpec> {
        let coeffs = match self.map {
            WindowMap::First => vec![1.0],
            WindowMap::Sum => vec![1.0; self.m0],
            WindowMap::Product if self.m0 == 1 => vec![1.0],
            _ => return None,
        };
        Some(LinearProcessSpec { coeffs, innov: self.innov, innov_variance: self.innov_variance })
    }

    pub fn truth(&self) -> ProcessTruth {
        if let Some(lin) = self.as_linear() {
            return derive_truth(&lin);
        }
        match self.map {
            // distinct lags share at least one innovation that appears once
            WindowMap::Product => {
                ProcessTruth::from_gamma(vec![self.innov_variance.powi(self.m0 as i32)])
            }
            _ => ProcessTruth::from_gamma(vec![0.0]),
        }
    }
}

/// Any process from the built-in menu.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ProcessSpec {
    Linear(LinearProcessSpec),
    MDependent(MDependentSpec),
}

impl ProcessSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            ProcessSpec::Linear(s) => s.validate(),
            ProcessSpec::MDependent(s) => s.validate(),
        }
    }

    pub fn innovation(&self) -> Innovation {
        match self {
            ProcessSpec::Linear(s) => s.innov,
            ProcessSpec::MDependent(s) => s.innov,
        }
    }

    pub fn truth(&self) -> ProcessTruth {
        match self {
            ProcessSpec::Linear(s) => derive_truth(s),
            ProcessSpec::MDependent(s) => s.truth(),
        }
    }

    pub fn as_linear(&self) -> Option<LinearProcessSpec> {
        match self {
            ProcessSpec::Linear(s) => Some(s.clone()),
            ProcessSpec::MDependent(s) => s.as_linear(),
        }
    }

    /// Number of innovations consumed beyond `n`.
    fn burn_in(&self) -> usize {
        match self {
            ProcessSpec::Linear(s) => s.order(),
            ProcessSpec::MDependent(s) => s.m0 - 1,
        }
    }

    pub fn generate(&self, n: usize, seed: u64) -> Result<TimeSeries> {
        self.validate()?;
        if n == 0 {
            return Err(Error::invalid("series length must be at least 1"));
        }
        let mut sampler = Sampler::new(self.clone());
        let mut values = Vec::with_capacity(n);
        sampler.fill(&mut rng::stream(seed), n, &mut values);
        Ok(TimeSeries { values, truth: Some(self.truth()), seed: Some(seed), spec: Some(self.clone()) })
    }

    pub fn sampler(&self) -> Sampler {
        Sampler::new(self.clone())
    }
}

/// Reusable path generator holding its innovation buffer.
#[derive(Clone, Debug)]
pub struct Sampler {
    spec: ProcessSpec,
    eps: Vec<f64>,
}

impl Sampler {
    pub fn new(spec: ProcessSpec) -> Self {
        Self { spec, eps: Vec::new() }
    }

    pub fn spec(&self) -> &ProcessSpec {
        &self.spec
    }

    /// Overwrite `out` with a fresh stationary path of length `n`.
    pub fn fill(&mut self, rng: &mut Stream, n: usize, out: &mut Vec<f64>) {
        let innov = self.spec.innovation();
        let burn = self.spec.burn_in();
        let (scale, _) = match &self.spec {
            ProcessSpec::Linear(s) => (s.innov_variance.sqrt(), ()),
            ProcessSpec::MDependent(s) => (s.innov_variance.sqrt(), ()),
        };
        self.eps.clear();
        self.eps.extend((0..n + burn).map(|_| scale * innov.draw(rng)));
        out.clear();
        match &self.spec {
            ProcessSpec::Linear(s) => {
                let j = s.order();
                // eps[t + j] holds ε at path time t
                out.extend((0..n).map(|t| {
                    s.coeffs
                        .iter()
                        .enumerate()
                        .map(|(i, a)| a * self.eps[t + j - i])
                        .sum::<f64>()
                }));
            }
            ProcessSpec::MDependent(s) => {
                let c = s.centering_constant();
                let m0 = s.m0;
                out.extend((0..n).map(|t| {
                    let w = &self.eps[t..t + m0];
                    let h = match s.map {
                        WindowMap::First => w[0],
                        WindowMap::Sum => w.iter().sum(),
                        WindowMap::Product => w.iter().product(),
                        WindowMap::Constant(k) => k,
                    };
                    h - c
                }));
            }
        }
    }
}

/// Population second-order quantities of a stationary process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProcessTruth {
    /// `γ(0), γ(1), …`; zero beyond the stored range.
    pub gamma: Vec<f64>,
    /// Long-run variance `Σ_{k∈Z} γ(k)`.
    pub sigma_inf_sq: f64,
    /// `Σ_{k≥1} k γ(k)`.
    pub weighted_gamma_sum: f64,
}

impl ProcessTruth {
    /// Truth for a process with finitely many nonzero autocovariances.
    pub fn from_gamma(gamma: Vec<f64>) -> Self {
        let sigma_inf_sq = gamma[0] + 2.0 * gamma[1..].iter().sum::<f64>();
        let weighted_gamma_sum = gamma.iter().enumerate().skip(1).map(|(k, g)| k as f64 * g).sum();
        Self { gamma, sigma_inf_sq, weighted_gamma_sum }
    }

    pub fn gamma(&self, lag: usize) -> f64 {
        self.gamma.get(lag).copied().unwrap_or(0.0)
    }

    /// Spectral density `f(ω) = (2π)^{-1} Σ_k γ(k) e^{-ikω}`.
    pub fn spectral_density(&self, omega: f64) -> f64 {
        let tail: f64 = self
            .gamma
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, g)| g * (k as f64 * omega).cos())
            .sum();
        ((self.gamma[0] + 2.0 * tail) / (2.0 * PI)).max(0.0)
    }

    /// `Var(ℓ^{-1/2} (X_1 + … + X_ℓ)) = Σ_{|k|<ℓ} (1 - |k|/ℓ) γ(k)`.
    pub fn block_sum_variance(&self, ell: usize) -> f64 {
        let l = ell as f64;
        let tail: f64 = (1..ell).map(|k| (1.0 - k as f64 / l) * self.gamma(k)).sum();
        self.gamma(0) + 2.0 * tail
    }
}

/// Closed-form truth of a finite moving average:
/// `γ(k) = σ_ε² Σ_i a_i a_{i+k}`, `σ∞² = σ_ε² (Σ a_i)²`.
pub fn derive_truth(spec: &LinearProcessSpec) -> ProcessTruth {
    let a = &spec.coeffs;
    let var = spec.innov_variance;
    let gamma: Vec<f64> = (0..a.len())
        .map(|k| var * a.iter().zip(&a[k..]).map(|(x, y)| x * y).sum::<f64>())
        .collect();
    let total: f64 = a.iter().sum();
    let weighted_gamma_sum = gamma.iter().enumerate().skip(1).map(|(k, g)| k as f64 * g).sum();
    ProcessTruth { gamma, sigma_inf_sq: var * total * total, weighted_gamma_sum }
}

/// An observed path plus, when generated here, its provenance and truth.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub values: Vec<f64>,
    pub truth: Option<ProcessTruth>,
    pub seed: Option<u64>,
    pub spec: Option<ProcessSpec>,
}

impl TimeSeries {
    /// Wrap externally supplied data.
    pub fn from_values(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("a series needs at least one value"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("series values must be finite"));
        }
        Ok(Self { values, truth: None, seed: None, spec: None })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }
}

pub fn gen_linear(spec: &LinearProcessSpec, n: usize, seed: u64) -> Result<TimeSeries> {
    ProcessSpec::Linear(spec.clone()).generate(n, seed)
}

pub fn gen_m_dependent(spec: &MDependentSpec, n: usize, seed: u64) -> Result<TimeSeries> {
    ProcessSpec::MDependent(spec.clone()).generate(n, seed)
}
