//! Edgeworth expansions: sample cumulants, the formal exponential identity,
//! Hermite inversion, and the Studentized-mean correction polynomials.
//!
//! Expansion polynomials are stored as real coefficient arrays in the formal
//! variable `w = it`; index `k` holds the coefficient of `w^k`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::procgen::{LinearProcessSpec, ProcessSpec};
use crate::rng;

pub const MAX_CUMULANT_ORDER: usize = 6;

pub fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Probabilists' Hermite polynomial `He_k(x)`, by
/// `He_{k+1} = x He_k - k He_{k-1}`.
pub fn hermite_he(k: usize, x: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, x);
    if k == 0 {
        return prev;
    }
    for j in 1..k {
        (prev, cur) = (cur, x * cur - j as f64 * prev);
    }
    cur
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CumulantSource {
    Analytic,
    /// Unbiased k-statistics for orders 2 to 4; orders 5 and 6 fall back to
    /// central-moment formulas.
    KStatistic,
    CentralMoment,
}

/// `χ_2, …, χ_s` of a scalar statistic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CumulantVector {
    /// `chi[0]` is `χ_2`.
    pub chi: Vec<f64>,
    pub source: CumulantSource,
}

impl CumulantVector {
    pub fn new(chi: Vec<f64>, source: CumulantSource) -> Result<Self> {
        if chi.len() < 2 || chi.len() + 1 > MAX_CUMULANT_ORDER {
            return Err(Error::invalid(format!(
                "cumulant vectors hold orders 2..=s with 3 <= s <= {MAX_CUMULANT_ORDER}"
            )));
        }
        if chi.iter().any(|c| !c.is_finite()) {
            return Err(Error::invalid("cumulants must be finite"));
        }
        if chi[0] <= 0.0 {
            return Err(Error::invalid("second cumulant must be positive"));
        }
        Ok(Self { chi, source })
    }

    /// Highest order `s`.
    pub fn order(&self) -> usize {
        self.chi.len() + 1
    }

    /// `χ_r`, or 0 above the stored order.
    pub fn chi(&self, r: usize) -> f64 {
        assert!(r >= 2, "cumulants start at order 2");
        self.chi.get(r - 2).copied().unwrap_or(0.0)
    }
}

/// Empirical cumulants of orders `2..=max_order`.
///
/// `KStatistic` needs more than `max_order` samples. `CentralMoment` uses
/// the biased plug-in formulas throughout and only needs two samples.
pub fn sample_cumulants(samples: &[f64], max_order: usize, mode: CumulantSource) -> Result<CumulantVector> {
    if !(3..=MAX_CUMULANT_ORDER).contains(&max_order) {
        return Err(Error::invalid(format!("cumulant order must lie in 3..={MAX_CUMULANT_ORDER}")));
    }
    let m = samples.len();
    let needed = match mode {
        CumulantSource::KStatistic => max_order + 1,
        CumulantSource::CentralMoment => 2,
        CumulantSource::Analytic => {
            return Err(Error::invalid("sample cumulants are either k-statistics or central-moment"))
        }
    };
    if m < needed {
        return Err(Error::invalid(format!("{m} samples are too few for order {max_order}")));
    }
    let mf = m as f64;
    let mean = samples.iter().sum::<f64>() / mf;
    let mut cm = [0.0; MAX_CUMULANT_ORDER + 1];
    for &v in samples {
        let d = v - mean;
        let mut p = d * d;
        for slot in cm.iter_mut().skip(2) {
            *slot += p;
            p *= d;
        }
    }
    cm.iter_mut().for_each(|c| *c /= mf);
    let [_, _, m2, m3, m4, m5, m6] = cm;
    let central = [
        m2,
        m3,
        m4 - 3.0 * m2 * m2,
        m5 - 10.0 * m3 * m2,
        m6 - 15.0 * m4 * m2 - 10.0 * m3 * m3 + 30.0 * m2 * m2 * m2,
    ];
    let mut chi: Vec<f64> = central[..max_order - 1].to_vec();
    if mode == CumulantSource::KStatistic {
        chi[0] = mf / (mf - 1.0) * m2;
        chi[1] = mf * mf * m3 / ((mf - 1.0) * (mf - 2.0));
        if max_order >= 4 {
            chi[2] = mf * mf * ((mf + 1.0) * m4 - 3.0 * (mf - 1.0) * m2 * m2)
                / ((mf - 1.0) * (mf - 2.0) * (mf - 3.0));
        }
    }
    CumulantVector::new(chi, mode)
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add_scaled(acc: &mut Vec<f64>, p: &[f64], c: f64) {
    if acc.len() < p.len() {
        acc.resize(p.len(), 0.0);
    }
    for (a, x) in acc.iter_mut().zip(p) {
        *a += c * x;
    }
}

/// `P_1, …, P_{s-2}` from
/// `exp(Σ_{r=3}^{s} u^{r-2} b̃^{(r-2)/2} χ_r w^r / r!) = 1 + Σ_r u^r P_r(w)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpansionPolys {
    pub s: usize,
    pub b_tilde: f64,
    /// `polys[r - 1]` holds the coefficients of `P_r`.
    pub polys: Vec<Vec<f64>>,
}

impl ExpansionPolys {
    pub fn p(&self, r: usize) -> &[f64] {
        &self.polys[r - 1]
    }
}

/// Power-series exponentiation in `u`: with `A(u) = Σ a_k u^k`,
/// the coefficients of `exp A` obey `e_k = k^{-1} Σ_{j=1}^{k} j a_j e_{k-j}`.
pub fn formal_expansion(cumulants: &CumulantVector, b_tilde: f64, s: usize) -> Result<ExpansionPolys> {
    if s < 3 || s > cumulants.order() {
        return Err(Error::invalid(format!(
            "expansion order s = {s} needs 3 <= s <= {}",
            cumulants.order()
        )));
    }
    if !(b_tilde > 0.0 && b_tilde.is_finite()) {
        return Err(Error::invalid("b_tilde must be positive"));
    }
    let top = s - 2;
    let mut a: Vec<Vec<f64>> = vec![vec![0.0]];
    for k in 1..=top {
        let r = k + 2;
        let fact: f64 = (1..=r).map(|v| v as f64).product();
        let mut coeffs = vec![0.0; r + 1];
        coeffs[r] = b_tilde.powf(k as f64 / 2.0) * cumulants.chi(r) / fact;
        a.push(coeffs);
    }
    let mut e: Vec<Vec<f64>> = vec![vec![1.0]];
    for k in 1..=top {
        let mut acc = vec![0.0];
        for j in 1..=k {
            poly_add_scaled(&mut acc, &poly_mul(&a[j], &e[k - j]), j as f64 / k as f64);
        }
        e.push(acc);
    }
    e.remove(0);
    Ok(ExpansionPolys { s, b_tilde, polys: e })
}

/// The expansion `Ψ_s` as a distribution function, inverted term by term:
/// `c w^k e^{-σ²t²/2}` maps to `-c σ^{-k} He_{k-1}(x/σ) φ(x/σ)` (σ² = χ_2).
#[derive(Clone, Debug, PartialEq)]
pub struct EeCdf {
    pub sigma: f64,
    /// Combined `Σ_r b̃^{-r/2} P_r`, coefficients in `w`.
    pub correction: Vec<f64>,
    pub polys: ExpansionPolys,
}

impl EeCdf {
    pub fn new(cumulants: &CumulantVector, b_tilde: f64, s: usize) -> Result<Self> {
        let polys = formal_expansion(cumulants, b_tilde, s)?;
        let mut correction = vec![0.0];
        for (i, p) in polys.polys.iter().enumerate() {
            poly_add_scaled(&mut correction, p, b_tilde.powf(-((i + 1) as f64) / 2.0));
        }
        Ok(Self { sigma: cumulants.chi(2).sqrt(), correction, polys })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let z = x / self.sigma;
        let phi = std_normal_pdf(z);
        let mut out = std_normal_cdf(z);
        for (k, c) in self.correction.iter().enumerate().skip(1) {
            if *c != 0.0 {
                out -= c * self.sigma.powi(-(k as i32)) * hermite_he(k - 1, z) * phi;
            }
        }
        out
    }

    pub fn density(&self, x: f64) -> f64 {
        let z = x / self.sigma;
        let phi = std_normal_pdf(z);
        let mut out = 1.0;
        for (k, c) in self.correction.iter().enumerate().skip(1) {
            if *c != 0.0 {
                out += c * self.sigma.powi(-(k as i32)) * hermite_he(k, z);
            }
        }
        out * phi / self.sigma
    }
}

pub fn ee_cdf(x: f64, cumulants: &CumulantVector, b_tilde: f64, s: usize) -> Result<f64> {
    Ok(EeCdf::new(cumulants, b_tilde, s)?.cdf(x))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentErrors {
    pub eu2: f64,
    pub ez2: f64,
    pub ez3: f64,
    pub ezv: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum MomentSource {
    Analytic,
    MonteCarlo { replicates: usize, seed: u64, se: MomentErrors },
}

/// Ingredients of the Studentized-mean polynomials.
///
/// `Z = n^{1/2}(X̄ - EX)`, `U` the scaled sum of a nonoverlapping block and
/// `V = b^{-1/2} Σ_k (U_k² - EU²)` over the `b = n/ℓ` nonoverlapping blocks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentizedEEParams {
    pub sigma_inf_sq: f64,
    pub weighted_gamma_sum: f64,
    pub n: usize,
    pub ell: usize,
    /// `E U²`
    pub eu2: f64,
    /// `E Z²`
    pub ez2: f64,
    /// `E Z³`
    pub ez3: f64,
    /// `E Z V`
    pub ezv: f64,
    pub source: MomentSource,
}

fn check_geometry(n: usize, ell: usize) -> Result<usize> {
    if ell == 0 || ell > n || n % ell != 0 {
        return Err(Error::invalid(format!("Studentized moments need ell | n (n = {n}, ell = {ell})")));
    }
    Ok(n / ell)
}

impl StudentizedEEParams {
    /// Closed forms for a linear process. Writing `Σ_t X_t = Σ_k c_k ε_k`
    /// and `√ℓ U_j = Σ_k d^{(j)}_k ε_k`:
    /// `EZ² = σ²Σc²/n`, `EZ³ = κ₃σ³Σc³/n^{3/2}`, `EU² = σ²Σ(d^{(1)})²/ℓ`,
    /// `EZV = κ₃σ³ Σ_j Σ_k c_k (d^{(j)}_k)² / (n^{1/2} b^{1/2} ℓ)`.
    pub fn analytic(spec: &LinearProcessSpec, n: usize, ell: usize) -> Result<Self> {
        spec.validate()?;
        let b = check_geometry(n, ell)?;
        let a = &spec.coeffs;
        let jmax = spec.order();
        let sigma2 = spec.innov_variance;
        let k3 = spec.innov.third_cumulant() * sigma2.powf(1.5);
        // innovation ε_k sits at offset k + jmax, k = 1 - J ..= n
        let span = n + jmax;
        let weights = |lo: usize, hi: usize| -> Vec<f64> {
            // coefficient of each innovation in Σ_{t=lo}^{hi-1} X_t (0-based t)
            let mut w = vec![0.0; span];
            for t in lo..hi {
                for (i, ai) in a.iter().enumerate() {
                    w[t + jmax - i] += ai;
                }
            }
            w
        };
        let c = weights(0, n);
        let nf = n as f64;
        let lf = ell as f64;
        let ez2 = sigma2 * c.iter().map(|v| v * v).sum::<f64>() / nf;
        let ez3 = k3 * c.iter().map(|v| v * v * v).sum::<f64>() / nf.powf(1.5);
        let d1 = weights(0, ell);
        let eu2 = sigma2 * d1.iter().map(|v| v * v).sum::<f64>() / lf;
        let mut cross = 0.0;
        if k3 != 0.0 {
            for j in 0..b {
                let lo = j * ell;
                // only offsets lo..lo+ell+jmax can be nonzero
                let mut d = vec![0.0; ell + jmax];
                for t in lo..lo + ell {
                    for (i, ai) in a.iter().enumerate() {
                        d[t + jmax - i - lo] += ai;
                    }
                }
                cross += d.iter().enumerate().map(|(o, dv)| c[lo + o] * dv * dv).sum::<f64>();
            }
        }
        let ezv = k3 * cross / (nf.sqrt() * (b as f64).sqrt() * lf);
        let truth = crate::procgen::derive_truth(spec);
        Ok(Self {
            sigma_inf_sq: truth.sigma_inf_sq,
            weighted_gamma_sum: truth.weighted_gamma_sum,
            n,
            ell,
            eu2,
            ez2,
            ez3,
            ezv,
            source: MomentSource::Analytic,
        })
    }

    /// Side Monte Carlo over `reps` independent paths from the
    /// `side-mc/studentized-moments` namespace. `σ∞²`, `Σkγ(k)` and the
    /// centering `EU²` inside `V` come from the process truth.
    pub fn monte_carlo(spec: &ProcessSpec, n: usize, ell: usize, reps: usize, seed: u64) -> Result<Self> {
        spec.validate()?;
        let b = check_geometry(n, ell)?;
        if reps < 2 {
            return Err(Error::invalid("side Monte Carlo needs at least 2 replicates"));
        }
        let truth = spec.truth();
        let eu2_true = truth.block_sum_variance(ell);
        let mut sampler = spec.sampler();
        let mut stream = rng::child_stream(seed, "side-mc/studentized-moments", 0);
        let mut x = Vec::with_capacity(n);
        let mut acc = [[0.0f64; 2]; 4];
        let (nf, lf, bf) = (n as f64, ell as f64, b as f64);
        for _ in 0..reps {
            sampler.fill(&mut stream, n, &mut x);
            let z = x.iter().sum::<f64>() / nf.sqrt();
            let mut u2 = 0.0;
            let mut v = 0.0;
            for chunk in x.chunks_exact(ell) {
                let u = chunk.iter().sum::<f64>() / lf.sqrt();
                u2 += u * u;
                v += u * u - eu2_true;
            }
            let obs = [u2 / bf, z * z, z * z * z, z * v / bf.sqrt()];
            for (a, o) in acc.iter_mut().zip(obs) {
                a[0] += o;
                a[1] += o * o;
            }
        }
        let r = reps as f64;
        let est = acc.map(|[s, ss]| {
            let m = s / r;
            (m, (((ss - r * m * m) / (r - 1.0)).max(0.0) / r).sqrt())
        });
        Ok(Self {
            sigma_inf_sq: truth.sigma_inf_sq,
            weighted_gamma_sum: truth.weighted_gamma_sum,
            n,
            ell,
            eu2: est[0].0,
            ez2: est[1].0,
            ez3: est[2].0,
            ezv: est[3].0,
            source: MomentSource::MonteCarlo {
                replicates: reps,
                seed,
                se: MomentErrors { eu2: est[0].1, ez2: est[1].1, ez3: est[2].1, ezv: est[3].1 },
            },
        })
    }

    /// Coefficient `c₁` in `p₁(y) = c₁ (y² - 1)`.
    pub fn p1_coefficient(&self) -> Result<f64> {
        if self.sigma_inf_sq <= 0.0 {
            return Err(Error::invalid("long-run variance must be positive"));
        }
        let n = self.n as f64;
        Ok(self.weighted_gamma_sum / self.sigma_inf_sq * n.cbrt() / self.ell as f64)
    }

    /// `(a, c)` in `p₂(y) = a y + c (y³ - 3y)`.
    pub fn p2_coefficients(&self) -> Result<(f64, f64)> {
        if self.eu2 <= 0.0 {
            return Err(Error::invalid("E U^2 must be positive"));
        }
        let l_half = (self.ell as f64).sqrt();
        let a = -l_half * self.ezv / (2.0 * self.eu2.powf(1.5));
        let c = ((self.n as f64).sqrt() * self.ez3 * self.eu2.powf(-1.5)
            - 3.0 * self.eu2.powf(-2.5) * self.ez2 * l_half * self.ezv)
            / 6.0;
        Ok((a, c))
    }
}

pub fn studentized_p1(y: f64, params: &StudentizedEEParams) -> Result<f64> {
    Ok((y * y - 1.0) * params.p1_coefficient()?)
}

pub fn studentized_p2(y: f64, params: &StudentizedEEParams) -> Result<f64> {
    let (a, c) = params.p2_coefficients()?;
    Ok(a * y + c * (y * y * y - 3.0 * y))
}

/// `∫_{-∞}^x φ(y)[1 + n^{-1/3} p₁(y) + n^{-1/2} p₂(y)] dy`, truncated after
/// `order` terms, using `∫(y²-1)φ = -xφ`, `∫yφ = -φ` and
/// `∫(y³-3y)φ = -(x²-1)φ`.
pub fn studentized_ee_cdf(x: f64, params: &StudentizedEEParams, order: usize) -> Result<f64> {
    let StudentizedCdf { c1, a, c, n } = StudentizedCdf::new(params, order)?;
    let phi = std_normal_pdf(x);
    Ok(std_normal_cdf(x) - n.cbrt().recip() * c1 * x * phi - n.sqrt().recip() * (a + c * (x * x - 1.0)) * phi)
}

/// Precomputed coefficients for evaluating the Studentized expansion on many points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StudentizedCdf {
    c1: f64,
    a: f64,
    c: f64,
    n: f64,
}

impl StudentizedCdf {
    pub fn new(params: &StudentizedEEParams, order: usize) -> Result<Self> {
        if !(1..=2).contains(&order) {
            return Err(Error::invalid(
                "only the first two Studentized correction terms have closed forms",
            ));
        }
        let c1 = params.p1_coefficient()?;
        let (a, c) = if order == 2 { params.p2_coefficients()? } else { (0.0, 0.0) };
        Ok(Self { c1, a, c, n: params.n as f64 })
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let phi = std_normal_pdf(x);
        std_normal_cdf(x)
            - self.n.cbrt().recip() * self.c1 * x * phi
            - self.n.sqrt().recip() * (self.a + self.c * (x * x - 1.0)) * phi
    }
}
