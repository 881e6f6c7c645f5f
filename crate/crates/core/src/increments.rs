//! Coefficient algebra and transfer functions of the GM increment operator
//! `Π_j (1 - B^{μ_j s_j})^{d_j}`, including fractional (Gegenbauer) expansions.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{GmiError, Result};

/// Step used to fill removable singularities of the kernel ratio.
pub const KERNEL_FILL_STEP: f64 = 1e-7;
/// Default truncation for fractional series.
pub const DEFAULT_FRACTIONAL_TRUNCATION: usize = 512;

/// One multiplicative factor `(1 - B^{μ s})^{R + D}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pattern {
    /// Step μ ≥ 1.
    pub mu: u32,
    /// Season length s ≥ 1.
    pub s: u32,
    /// Integer order R ≥ 0.
    pub r_int: u32,
    /// Fractional order D.
    #[serde(default)]
    pub d_frac: f64,
}

impl Pattern {
    /// Integer-order pattern.
    pub fn integer(mu: u32, s: u32, r_int: u32) -> Self {
        Pattern {
            mu,
            s,
            r_int,
            d_frac: 0.0,
        }
    }

    /// Total order `R + D`.
    pub fn order(&self) -> f64 {
        self.r_int as f64 + self.d_frac
    }
}

/// Multiplicative increment structure together with the period T.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementSpec {
    /// Factors of the increment operator.
    pub patterns: Vec<Pattern>,
    /// Period T (dimension of the vector sequence).
    pub period: usize,
}

/// Dense coefficients of the integer increment polynomial, `coeffs[0] = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolyCoeffs {
    /// `e_γ(0..=n(γ))`.
    pub coeffs: Vec<f64>,
}

impl PolyCoeffs {
    /// Degree n(γ).
    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    /// Coefficient at `k`, zero outside the support.
    pub fn get(&self, k: i64) -> f64 {
        if k < 0 {
            0.0
        } else {
            self.coeffs.get(k as usize).copied().unwrap_or(0.0)
        }
    }
}

/// Truncated power series with a tail-size estimate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesCoeffs {
    /// Coefficients `0..=truncation`.
    pub coeffs: Vec<f64>,
    /// Index of the last retained coefficient.
    pub truncation: usize,
    /// Estimated l2 norm of the neglected tail.
    pub tail_bound: f64,
}

/// Which of the two mutually inverse fractional series to expand.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FracSign {
    /// Inverse fractional operator (Gegenbauer orders `+D̃`).
    Plus,
    /// Fractional operator itself (Gegenbauer orders `-D̃`).
    Minus,
}

/// One element of the merged frequency set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MergedFrequency {
    /// Frequency ν in `[0, π]`.
    pub nu: f64,
    /// Aggregated fractional order `D_ν`.
    pub order: f64,
    /// Gegenbauer order `D̃_ν` (halved at ν = 0 and ν = π).
    pub tilde: f64,
}

impl IncrementSpec {
    /// Validated constructor.
    pub fn new(patterns: Vec<Pattern>, period: usize) -> Result<Self> {
        let spec = IncrementSpec { patterns, period };
        spec.validate()?;
        Ok(spec)
    }

    /// Single integer pattern convenience constructor.
    pub fn single(mu: u32, s: u32, r_int: u32, period: usize) -> Result<Self> {
        Self::new(vec![Pattern::integer(mu, s, r_int)], period)
    }

    /// Checks structural invariants.
    pub fn validate(&self) -> Result<()> {
        if self.patterns.is_empty() {
            return Err(GmiError::InvalidSpec("empty pattern list".into()));
        }
        if self.period == 0 {
            return Err(GmiError::InvalidSpec("period must be positive".into()));
        }
        for p in &self.patterns {
            if p.mu == 0 || p.s == 0 {
                return Err(GmiError::InvalidSpec(format!(
                    "steps and seasons must be positive (mu={}, s={})",
                    p.mu, p.s
                )));
            }
            if !p.d_frac.is_finite() {
                return Err(GmiError::InvalidSpec("non-finite fractional order".into()));
            }
        }
        if self.n_gamma_u64() > u32::MAX as u64 {
            return Err(GmiError::InvalidSpec("increment degree too large".into()));
        }
        Ok(())
    }

    /// True when every fractional part vanishes.
    pub fn is_integer(&self) -> bool {
        self.patterns.iter().all(|p| p.d_frac == 0.0)
    }

    fn n_gamma_u64(&self) -> u64 {
        self.patterns
            .iter()
            .map(|p| p.mu as u64 * p.s as u64 * p.r_int as u64)
            .sum()
    }

    /// Degree `n(γ) = Σ μ_i s_i R_i` of the integer increment polynomial.
    pub fn n_gamma(&self) -> usize {
        self.n_gamma_u64() as usize
    }

    /// Total order `Σ d_j`.
    pub fn total_order(&self) -> f64 {
        self.patterns.iter().map(|p| p.order()).sum()
    }

    /// Copy with the steps replaced.
    pub fn with_steps(&self, steps: &[u32]) -> Result<Self> {
        if steps.len() != self.patterns.len() {
            return Err(GmiError::InvalidSpec(format!(
                "expected {} steps, got {}",
                self.patterns.len(),
                steps.len()
            )));
        }
        let patterns = self
            .patterns
            .iter()
            .zip(steps)
            .map(|(p, &mu)| Pattern { mu, ..*p })
            .collect();
        Self::new(patterns, self.period)
    }

    /// Steps of the patterns.
    pub fn steps(&self) -> Vec<u32> {
        self.patterns.iter().map(|p| p.mu).collect()
    }

    /// True when some step exceeds one, so that the transfer function has
    /// zeros not cancelled by `β`.
    pub fn has_uncancelled_zeros(&self) -> bool {
        self.patterns.iter().any(|p| p.mu > 1 && p.order() != 0.0)
    }

    /// Fractional structure: unit steps and strictly increasing seasons
    /// (a leading season of one is allowed).
    pub fn check_fractional_structure(&self) -> Result<()> {
        for w in self.patterns.windows(2) {
            if w[1].s <= w[0].s {
                return Err(GmiError::InvalidSpec(
                    "fractional case requires strictly increasing seasons".into(),
                ));
            }
        }
        if self.patterns.iter().any(|p| p.mu != 1 && p.d_frac != 0.0) {
            return Err(GmiError::InvalidSpec(
                "fractional case requires unit steps".into(),
            ));
        }
        Ok(())
    }

    /// Merged frequency set with aggregated fractional orders.
    pub fn merged_frequencies(&self) -> Vec<MergedFrequency> {
        let mut map: BTreeMap<(u32, u32), f64> = BTreeMap::new();
        for p in &self.patterns {
            let s = p.s;
            for k in 0..=s / 2 {
                let g = gcd(k, s);
                let key = (k / g, s / g);
                *map.entry(key).or_insert(0.0) += p.d_frac;
            }
        }
        let mut out: Vec<MergedFrequency> = map
            .into_iter()
            .map(|((k, s), order)| {
                let nu = 2.0 * PI * k as f64 / s as f64;
                let edge = k == 0 || 2 * k == s;
                MergedFrequency {
                    nu,
                    order,
                    tilde: if edge { order / 2.0 } else { order },
                }
            })
            .collect();
        out.sort_by(|a, b| a.nu.partial_cmp(&b.nu).unwrap());
        out
    }

    /// Enforces `-1/2 < D_ν < 1/2` on the merged frequency set.
    pub fn stationarity_gate(&self) -> Result<()> {
        for m in self.merged_frequencies() {
            if !(m.order > -0.5 && m.order < 0.5) {
                return Err(GmiError::StationarityGate {
                    nu: m.nu,
                    order: m.order,
                });
            }
        }
        Ok(())
    }

    /// True when some aggregated order lies in `(0, 1/2)`.
    pub fn long_memory(&self) -> bool {
        self.merged_frequencies()
            .iter()
            .any(|m| m.order > 0.0 && m.order < 0.5)
    }

    /// Zeros of `β` in `[-π, π]` (frequencies `2πk/s`, `|k| ≤ ⌊s/2⌋`).
    pub fn beta_zeros(&self) -> Vec<f64> {
        let mut z = Vec::new();
        for p in &self.patterns {
            if p.order() == 0.0 {
                continue;
            }
            let h = (p.s / 2) as i64;
            for k in -h..=h {
                z.push(2.0 * PI * k as f64 / p.s as f64);
            }
        }
        z.sort_by(|a, b| a.partial_cmp(b).unwrap());
        z.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
        z
    }
}

fn gcd(a: u32, b: u32) -> u32 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn series_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    for (i, &x) in a.iter().enumerate().take(n + 1) {
        if x == 0.0 {
            continue;
        }
        for (j, &y) in b.iter().enumerate().take(n + 1 - i) {
            out[i + j] += x * y;
        }
    }
    out
}

fn binomial(n: u32, k: u32) -> f64 {
    let mut r = 1.0;
    for i in 0..k {
        r = r * (n - i) as f64 / (i + 1) as f64;
    }
    r.round()
}

fn require_integer(spec: &IncrementSpec, what: &str) -> Result<()> {
    spec.validate()?;
    if !spec.is_integer() {
        return Err(GmiError::InvalidSpec(format!(
            "{what} requires integer orders"
        )));
    }
    Ok(())
}

/// Coefficients of `Π_i (1 - x^{μ_i s_i})^{R_i}`.
pub fn increment_polynomial(spec: &IncrementSpec) -> Result<PolyCoeffs> {
    require_integer(spec, "increment polynomial")?;
    let mut poly = vec![1.0];
    for p in &spec.patterns {
        let l = (p.mu * p.s) as usize;
        let mut factor = vec![0.0; l * p.r_int as usize + 1];
        for k in 0..=p.r_int {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            factor[l * k as usize] = sign * binomial(p.r_int, k);
        }
        poly = poly_mul(&poly, &factor);
    }
    Ok(PolyCoeffs { coeffs: poly })
}

/// Applies the increment operator to a vector series (rows are time points):
/// `out(m) = Σ_k e_γ(k) x(m - k)`, dropping the first `n(γ)` points.
pub fn apply_increment(series: &[Vec<f64>], spec: &IncrementSpec) -> Result<Vec<Vec<f64>>> {
    let e = increment_polynomial(spec)?;
    let n = e.degree();
    if series.len() <= n {
        return Err(GmiError::InsufficientData(format!(
            "series length {} must exceed increment degree {}",
            series.len(),
            n
        )));
    }
    let dim = series[0].len();
    let mut out = Vec::with_capacity(series.len() - n);
    for m in n..series.len() {
        let mut v = vec![0.0; dim];
        for (k, &ek) in e.coeffs.iter().enumerate() {
            if ek == 0.0 {
                continue;
            }
            for (vi, xi) in v.iter_mut().zip(&series[m - k]) {
                *vi += ek * xi;
            }
        }
        out.push(v);
    }
    Ok(out)
}

/// First `n_max + 1` coefficients of `Π_i (Σ_j x^{μ_i s_i j})^{R_i}`, the
/// inverse series of the increment polynomial.
pub fn dmu_coefficients(spec: &IncrementSpec, n_max: usize) -> Result<SeriesCoeffs> {
    require_integer(spec, "d_mu coefficients")?;
    let n = n_max + 1;
    let mut out = vec![0.0_f64; n + 1];
    out[0] = 1.0;
    for p in &spec.patterns {
        let l = (p.mu * p.s) as usize;
        for _ in 0..p.r_int {
            // multiply by 1/(1 - x^l): running sum with stride l
            for k in l..=n {
                out[k] += out[k - l];
            }
        }
    }
    let next = out[n].abs();
    out.truncate(n);
    Ok(SeriesCoeffs {
        coeffs: out,
        truncation: n_max,
        tail_bound: next,
    })
}

/// Gegenbauer coefficients `C_n^{(d)}(u)`, `n = 0..=n_max`, by the three-term
/// recursion.
pub fn gegenbauer_coeffs(d: f64, u: f64, n_max: usize) -> SeriesCoeffs {
    let mut c = Vec::with_capacity(n_max + 1);
    c.push(1.0);
    if n_max >= 1 {
        c.push(2.0 * d * u);
    }
    for n in 2..=n_max {
        let nf = n as f64;
        let v = (2.0 * u * (nf + d - 1.0) * c[n - 1] - (nf + 2.0 * d - 2.0) * c[n - 2]) / nf;
        c.push(v);
    }
    let tail = tail_estimate(&c, 2.0 * d - 1.0);
    SeriesCoeffs {
        coeffs: c,
        truncation: n_max,
        tail_bound: tail,
    }
}

/// l2 tail estimate for coefficients decaying like `m^{δ-1}`.
fn tail_estimate(c: &[f64], delta: f64) -> f64 {
    let n = c.len();
    if n < 2 {
        return 0.0;
    }
    let amp = c[n.saturating_sub(8)..]
        .iter()
        .fold(0.0_f64, |m, x| m.max(x.abs()));
    if delta >= 0.5 {
        return f64::INFINITY;
    }
    amp * (n as f64 / (1.0 - 2.0 * delta)).sqrt()
}

/// `G⁺` or `G⁻` coefficients of the fractional operator over the merged
/// frequency set, `m = 0..=n_max`.
pub fn fractional_expansion(
    spec: &IncrementSpec,
    sign: FracSign,
    n_max: usize,
) -> Result<SeriesCoeffs> {
    spec.validate()?;
    spec.check_fractional_structure()?;
    spec.stationarity_gate()?;
    let mut out = vec![0.0; n_max + 1];
    out[0] = 1.0;
    let mut delta = -1.0_f64;
    for m in spec.merged_frequencies() {
        if m.tilde == 0.0 {
            continue;
        }
        let d = match sign {
            FracSign::Plus => m.tilde,
            FracSign::Minus => -m.tilde,
        };
        let g = gegenbauer_coeffs(d, m.nu.cos(), n_max);
        out = series_mul(&out, &g.coeffs, n_max);
        let signed = match sign {
            FracSign::Plus => m.order,
            FracSign::Minus => -m.order,
        };
        delta = delta.max(signed);
    }
    let tail = if delta < -0.5 {
        0.0
    } else {
        tail_estimate(&out, delta)
    };
    Ok(SeriesCoeffs {
        coeffs: out,
        truncation: n_max,
        tail_bound: tail,
    })
}

/// `z^d` with the integer part taken by repeated multiplication.
fn cpow(z: Complex64, r_int: u32, d_frac: f64) -> Complex64 {
    let mut v = z.powi(r_int as i32);
    if d_frac != 0.0 {
        if z.norm() == 0.0 {
            return if d_frac > 0.0 {
                Complex64::new(0.0, 0.0)
            } else {
                Complex64::new(f64::INFINITY, 0.0)
            };
        }
        v *= z.powf(d_frac);
    }
    v
}

/// `1 - e^{-iθ}` evaluated without cancellation.
fn one_minus_exp(theta: f64) -> Complex64 {
    Complex64::new(0.0, 2.0 * (theta / 2.0).sin()) * Complex64::from_polar(1.0, -theta / 2.0)
}

/// `χ_μ^{(d)}(e^{-iλ}) = Π_j (1 - e^{-iλ μ_j s_j})^{d_j}`.
pub fn chi_transfer(spec: &IncrementSpec, lambda: f64) -> Complex64 {
    spec.patterns
        .iter()
        .fold(Complex64::new(1.0, 0.0), |acc, p| {
            let theta = lambda * (p.mu * p.s) as f64;
            acc * cpow(one_minus_exp(theta), p.r_int, p.d_frac)
        })
}

/// `β^{(d)}(iλ) = Π_j Π_{|k| ≤ ⌊s_j/2⌋} (iλ - 2πik/s_j)^{d_j}`.
pub fn beta_transfer(spec: &IncrementSpec, lambda: f64) -> Complex64 {
    let mut acc = Complex64::new(1.0, 0.0);
    for p in &spec.patterns {
        if p.order() == 0.0 {
            continue;
        }
        let h = (p.s / 2) as i64;
        for k in -h..=h {
            let z = Complex64::new(0.0, lambda - 2.0 * PI * k as f64 / p.s as f64);
            acc *= cpow(z, p.r_int, p.d_frac);
        }
    }
    acc
}

/// `χ/β` with removable singularities filled by averaging at `λ ± step`.
pub fn kernel_ratio_with_step(spec: &IncrementSpec, lambda: f64, step: f64) -> Complex64 {
    let near = spec
        .beta_zeros()
        .iter()
        .any(|&nu| (lambda - nu).abs() < step);
    if near {
        let a = chi_transfer(spec, lambda + step) / beta_transfer(spec, lambda + step);
        let b = chi_transfer(spec, lambda - step) / beta_transfer(spec, lambda - step);
        (a + b) * 0.5
    } else {
        chi_transfer(spec, lambda) / beta_transfer(spec, lambda)
    }
}

/// `χ/β` with removable singularities filled.
pub fn kernel_ratio(spec: &IncrementSpec, lambda: f64) -> Complex64 {
    kernel_ratio_with_step(spec, lambda, KERNEL_FILL_STEP)
}

/// Kernel ratio sampled on the grid `λ_m = -π + 2πm/M`.
pub fn kernel_on_grid(spec: &IncrementSpec, grid: usize) -> Vec<Complex64> {
    (0..grid)
        .map(|m| kernel_ratio(spec, -PI + 2.0 * PI * m as f64 / grid as f64))
        .collect()
}
