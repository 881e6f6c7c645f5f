//! Spectral density models, uniform-grid evaluation, FFT quadrature of Fourier
//! coefficients, structural functions, the minimality check and the
//! fractional density transform.

use std::f64::consts::PI;

use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{GmiError, Result};
use crate::increments::{
    beta_transfer, fractional_expansion, kernel_on_grid, FracSign, IncrementSpec,
};
use crate::linalg::{c64, hermitian_part, inverse, max_abs, min_eig, CMat, CZERO};

/// Default quadrature grid size.
pub const DEFAULT_GRID: usize = 4096;
/// Default cap on the minimality integral.
pub const DEFAULT_MINIMALITY_CAP: f64 = 1e8;
/// Default cap on `|χ^{(D)}|^{-2}` near fractional poles.
pub const DEFAULT_POLE_CAP: f64 = 1e6;
/// Integrand magnitude treated as overflow in quadratures.
pub const OVERFLOW_GUARD: f64 = 1e12;

/// Role of a density in the estimation problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    /// Density of the increment measure of the target sequence.
    F,
    /// Density of the stationary noise.
    G,
    /// Density of the observed sequence, `f + |β|² g`.
    P,
    /// Short-memory part of a fractional density.
    FTilde,
    /// Any other matrix function sampled on the grid.
    Other,
}

/// `λ_m = -π + 2πm/M`.
#[inline]
pub fn grid_lambda(m: usize, grid: usize) -> f64 {
    -PI + 2.0 * PI * m as f64 / grid as f64
}

/// Samples of a T×T matrix density on the uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDensityGrid {
    /// One matrix per grid point.
    pub values: Vec<CMat>,
    /// Role tag.
    pub label: Role,
}

impl SpectralDensityGrid {
    /// Wraps samples; the grid size must be a power of two and all samples square
    /// of equal size.
    pub fn new(values: Vec<CMat>, label: Role) -> Result<Self> {
        let m = values.len();
        if m < 4 || !m.is_power_of_two() {
            return Err(GmiError::InvalidGrid(format!(
                "grid size {m} is not a power of two >= 4"
            )));
        }
        let t = values[0].nrows();
        if t == 0 || values.iter().any(|v| v.nrows() != t || v.ncols() != t) {
            return Err(GmiError::InvalidGrid(
                "samples must be square of equal size".into(),
            ));
        }
        Ok(SpectralDensityGrid { values, label })
    }

    /// Scalar density from real samples.
    pub fn from_scalar(samples: &[f64], label: Role) -> Result<Self> {
        Self::new(
            samples
                .iter()
                .map(|&x| CMat::from_element(1, 1, c64(x, 0.0)))
                .collect(),
            label,
        )
    }

    /// Constant density.
    pub fn constant(value: &CMat, grid: usize, label: Role) -> Result<Self> {
        Self::new(vec![value.clone(); grid], label)
    }

    /// Zero density of dimension `t`.
    pub fn zeros(grid: usize, t: usize, label: Role) -> Result<Self> {
        Self::new(vec![CMat::zeros(t, t); grid], label)
    }

    /// Number of grid points M.
    pub fn grid_size(&self) -> usize {
        self.values.len()
    }

    /// Matrix dimension T.
    pub fn dim(&self) -> usize {
        self.values[0].nrows()
    }

    /// Frequency of grid point `m`.
    pub fn lambda(&self, m: usize) -> f64 {
        grid_lambda(m, self.grid_size())
    }

    /// Scalar samples (real part of the (0,0) entry).
    pub fn scalar_samples(&self) -> Vec<f64> {
        self.values.iter().map(|v| v[(0, 0)].re).collect()
    }

    /// Multiplies every sample by a real scalar.
    pub fn scaled(&self, k: f64) -> Self {
        SpectralDensityGrid {
            values: self.values.iter().map(|v| v.scale(k)).collect(),
            label: self.label,
        }
    }

    /// Multiplies sample `m` by the real weight `w[m]`.
    pub fn weighted(&self, w: &[f64], label: Role) -> Self {
        SpectralDensityGrid {
            values: self
                .values
                .iter()
                .zip(w)
                .map(|(v, &x)| v.scale(x))
                .collect(),
            label,
        }
    }

    /// Largest entry modulus over the grid.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(max_abs).fold(0.0, f64::max)
    }

    /// Keeps every `step`-th sample.
    pub fn subsample(&self, step: usize) -> Result<Self> {
        Self::new(
            self.values.iter().step_by(step).cloned().collect(),
            self.label,
        )
    }

    /// Checks Hermitian symmetry and positive semidefiniteness to `tol`
    /// (relative to the sup norm).
    pub fn check_psd(&self, tol: f64) -> Result<()> {
        let scale = self.sup_norm().max(1.0);
        for (m, v) in self.values.iter().enumerate() {
            if v.iter().any(|z| !z.is_finite()) {
                return Err(GmiError::NotPsd(format!(
                    "non-finite sample at lambda = {}",
                    self.lambda(m)
                )));
            }
            if max_abs(&(v - v.adjoint())) > tol * scale {
                return Err(GmiError::NotPsd(format!(
                    "non-Hermitian sample at lambda = {}",
                    self.lambda(m)
                )));
            }
            if min_eig(v) < -tol * scale {
                return Err(GmiError::NotPsd(format!(
                    "negative eigenvalue at lambda = {}",
                    self.lambda(m)
                )));
            }
        }
        Ok(())
    }

    /// Errors unless `other` has the same grid size and dimension.
    pub fn same_grid(&self, other: &Self) -> Result<()> {
        if self.grid_size() != other.grid_size() || self.dim() != other.dim() {
            return Err(GmiError::GridMismatch(format!(
                "({} points, T={}) vs ({} points, T={})",
                self.grid_size(),
                self.dim(),
                other.grid_size(),
                other.dim()
            )));
        }
        Ok(())
    }
}

/// Density model evaluated on demand.
#[derive(Debug, Clone, PartialEq)]
pub enum DensityModel {
    /// Frequency-independent matrix.
    Constant(CMat),
    /// `D(z)^{-1} N(z) N(z)^* D(z)^{-*}` with `z = e^{-iλ}`, `N(z) = Σ N_k z^k`
    /// and `D(z) = Σ D_k z^k` (identity when the denominator list is empty).
    Rational {
        /// Numerator coefficients.
        num: Vec<CMat>,
        /// Denominator coefficients.
        den: Vec<CMat>,
    },
    /// Pre-sampled grid.
    Tabulated(SpectralDensityGrid),
}

impl DensityModel {
    /// Scalar moving-average density `|Σ c_k e^{-iλk}|²`.
    pub fn scalar_ma(coeffs: &[f64]) -> Self {
        DensityModel::Rational {
            num: coeffs
                .iter()
                .map(|&c| CMat::from_element(1, 1, c64(c, 0.0)))
                .collect(),
            den: vec![],
        }
    }

    /// Scalar ARMA density `σ² |θ(z)|² / |φ(z)|²`.
    pub fn scalar_arma(sigma: f64, ma: &[f64], ar: &[f64]) -> Self {
        DensityModel::Rational {
            num: ma
                .iter()
                .map(|&c| CMat::from_element(1, 1, c64(sigma * c, 0.0)))
                .collect(),
            den: ar
                .iter()
                .map(|&c| CMat::from_element(1, 1, c64(c, 0.0)))
                .collect(),
        }
    }

    /// Scalar constant density.
    pub fn scalar_constant(v: f64) -> Self {
        DensityModel::Constant(CMat::from_element(1, 1, c64(v, 0.0)))
    }

    /// Matrix dimension.
    pub fn dim(&self) -> usize {
        match self {
            DensityModel::Constant(c) => c.nrows(),
            DensityModel::Rational { num, .. } => num.first().map(|n| n.nrows()).unwrap_or(0),
            DensityModel::Tabulated(g) => g.dim(),
        }
    }

    /// Parses the `[density]` table of a TOML document.
    pub fn from_toml_str(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            density: DensityToml,
        }
        let doc: Doc = toml::from_str(s).map_err(|e| GmiError::Parse(e.to_string()))?;
        doc.density.to_model()
    }

    /// Serializes as a TOML document with a `[density]` table.
    pub fn to_toml_string(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc {
            density: DensityToml,
        }
        let doc = Doc {
            density: DensityToml::from_model(self)?,
        };
        toml::to_string(&doc).map_err(|e| GmiError::Parse(e.to_string()))
    }
}

/// TOML representation of a density model. Coefficient matrices are lists of
/// `T²` `[re, im]` pairs in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityToml {
    /// `"constant"` or `"rational"`.
    pub kind: String,
    /// Matrix dimension.
    #[serde(rename = "T")]
    pub t: usize,
    /// Numerator coefficients (the single matrix for `"constant"`).
    #[serde(default)]
    pub num_coeffs: Vec<Vec<[f64; 2]>>,
    /// Denominator coefficients.
    #[serde(default)]
    pub den_coeffs: Vec<Vec<[f64; 2]>>,
}

fn mat_from_pairs(t: usize, pairs: &[[f64; 2]]) -> Result<CMat> {
    if pairs.len() != t * t {
        return Err(GmiError::Parse(format!(
            "expected {} entries, got {}",
            t * t,
            pairs.len()
        )));
    }
    Ok(CMat::from_row_iterator(
        t,
        t,
        pairs.iter().map(|p| c64(p[0], p[1])),
    ))
}

fn mat_to_pairs(m: &CMat) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push([m[(i, j)].re, m[(i, j)].im]);
        }
    }
    out
}

impl DensityToml {
    /// Converts to a model.
    pub fn to_model(&self) -> Result<DensityModel> {
        if self.t == 0 {
            return Err(GmiError::Parse("T must be positive".into()));
        }
        let num: Vec<CMat> = self
            .num_coeffs
            .iter()
            .map(|c| mat_from_pairs(self.t, c))
            .collect::<Result<_>>()?;
        let den: Vec<CMat> = self
            .den_coeffs
            .iter()
            .map(|c| mat_from_pairs(self.t, c))
            .collect::<Result<_>>()?;
        match self.kind.as_str() {
            "constant" => {
                if num.len() != 1 || !den.is_empty() {
                    return Err(GmiError::Parse(
                        "constant density takes exactly one num_coeffs matrix".into(),
                    ));
                }
                Ok(DensityModel::Constant(num[0].clone()))
            }
            "rational" => {
                if num.is_empty() {
                    return Err(GmiError::Parse("rational density needs num_coeffs".into()));
                }
                Ok(DensityModel::Rational { num, den })
            }
            other => Err(GmiError::Parse(format!("unknown density kind '{other}'"))),
        }
    }

    /// Converts from a model; tabulated grids have no TOML form.
    pub fn from_model(m: &DensityModel) -> Result<Self> {
        match m {
            DensityModel::Constant(c) => Ok(DensityToml {
                kind: "constant".into(),
                t: c.nrows(),
                num_coeffs: vec![mat_to_pairs(c)],
                den_coeffs: vec![],
            }),
            DensityModel::Rational { num, den } => Ok(DensityToml {
                kind: "rational".into(),
                t: m.dim(),
                num_coeffs: num.iter().map(mat_to_pairs).collect(),
                den_coeffs: den.iter().map(mat_to_pairs).collect(),
            }),
            DensityModel::Tabulated(_) => Err(GmiError::Parse(
                "tabulated densities are not TOML-serializable".into(),
            )),
        }
    }
}

fn poly_at(coeffs: &[CMat], z: Complex64, t: usize) -> CMat {
    let mut acc = CMat::zeros(t, t);
    let mut zk = Complex64::new(1.0, 0.0);
    for c in coeffs {
        acc += c * zk;
        zk *= z;
    }
    acc
}

fn check_grid_size(grid: usize) -> Result<()> {
    if grid < 64 || !grid.is_power_of_two() {
        return Err(GmiError::InvalidGrid(format!(
            "grid size {grid} must be a power of two >= 64"
        )));
    }
    Ok(())
}

/// Samples a model on the uniform grid of size `grid`, Hermitian-symmetrized.
pub fn eval_density(model: &DensityModel, grid: usize) -> Result<SpectralDensityGrid> {
    check_grid_size(grid)?;
    let values = match model {
        DensityModel::Constant(c) => vec![hermitian_part(c); grid],
        DensityModel::Rational { num, den } => {
            let t = model.dim();
            if num
                .iter()
                .chain(den.iter())
                .any(|c| c.nrows() != t || c.ncols() != t)
            {
                return Err(GmiError::InvalidSpec(
                    "coefficient matrices must be T x T".into(),
                ));
            }
            let den_scale: f64 = den.iter().map(max_abs).sum::<f64>().max(1.0);
            let mut out = Vec::with_capacity(grid);
            for m in 0..grid {
                let lam = grid_lambda(m, grid);
                let z = Complex64::from_polar(1.0, -lam);
                let n = poly_at(num, z, t);
                let s = if den.is_empty() {
                    n
                } else {
                    let d = poly_at(den, z, t);
                    if d.determinant().norm() <= 1e-12 * den_scale.powi(t as i32) {
                        return Err(GmiError::Singular {
                            context: "density denominator".into(),
                            lambda: lam,
                        });
                    }
                    let di = inverse(&d).ok_or(GmiError::Singular {
                        context: "density denominator".into(),
                        lambda: lam,
                    })?;
                    di * n
                };
                out.push(hermitian_part(&(&s * s.adjoint())));
            }
            out
        }
        DensityModel::Tabulated(g) => {
            let have = g.grid_size();
            if have == grid {
                g.values.clone()
            } else if have > grid && have % grid == 0 {
                g.values.iter().step_by(have / grid).cloned().collect()
            } else {
                return Err(GmiError::GridMismatch(format!(
                    "tabulated grid {have} cannot serve grid {grid}"
                )));
            }
        }
    };
    SpectralDensityGrid::new(values, Role::Other)
}

/// `|β(iλ)|²` on the grid.
pub fn beta_abs2_on_grid(spec: &IncrementSpec, grid: usize) -> Vec<f64> {
    (0..grid)
        .map(|m| beta_transfer(spec, grid_lambda(m, grid)).norm_sqr())
        .collect()
}

/// `|χ/β|²` on the grid with removable singularities filled.
pub fn kernel_abs2_on_grid(spec: &IncrementSpec, grid: usize) -> Vec<f64> {
    kernel_on_grid(spec, grid)
        .iter()
        .map(|k| k.norm_sqr())
        .collect()
}

/// `p = f + |β|² g`.
pub fn noisy_density(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
) -> Result<SpectralDensityGrid> {
    f.same_grid(g)?;
    if spec.period != f.dim() {
        return Err(GmiError::GridMismatch(format!(
            "period {} vs density dimension {}",
            spec.period,
            f.dim()
        )));
    }
    let b2 = beta_abs2_on_grid(spec, f.grid_size());
    let values = f
        .values
        .iter()
        .zip(&g.values)
        .zip(&b2)
        .map(|((fv, gv), &b)| hermitian_part(&(fv + gv.scale(b))))
        .collect();
    SpectralDensityGrid::new(values, Role::P)
}

/// Observed increment density `|χ/β|² p`.
pub fn increment_weighted(p: &SpectralDensityGrid, spec: &IncrementSpec) -> SpectralDensityGrid {
    p.weighted(&kernel_abs2_on_grid(spec, p.grid_size()), Role::Other)
}

/// Converts an increment-sequence density to the density `f = incr / |χ/β|²`.
pub fn increment_to_f(
    incr: &SpectralDensityGrid,
    spec: &IncrementSpec,
) -> Result<SpectralDensityGrid> {
    let k2 = kernel_abs2_on_grid(spec, incr.grid_size());
    let mut w = Vec::with_capacity(k2.len());
    for (m, &k) in k2.iter().enumerate() {
        if !(k > 1e-300) {
            return Err(GmiError::Unbounded(format!(
                "kernel ratio vanishes at lambda = {}; f is not finite",
                incr.lambda(m)
            )));
        }
        w.push(1.0 / k);
    }
    Ok(incr.weighted(&w, Role::F))
}

/// Converts `f` to the increment-sequence density `|χ/β|² f`.
pub fn f_to_increment(f: &SpectralDensityGrid, spec: &IncrementSpec) -> SpectralDensityGrid {
    f.weighted(&kernel_abs2_on_grid(spec, f.grid_size()), Role::Other)
}

/// Forward FFT of the entry sequences of a matrix function, for repeated
/// Fourier-coefficient queries.
#[derive(Debug, Clone)]
pub struct FourierTable {
    grid: usize,
    dim_r: usize,
    dim_c: usize,
    spectra: Vec<Vec<Complex64>>,
}

impl FourierTable {
    /// Transforms the samples (matrices of any common shape).
    pub fn new(values: &[CMat]) -> Self {
        let grid = values.len();
        let (dim_r, dim_c) = (values[0].nrows(), values[0].ncols());
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(grid);
        let mut spectra = Vec::with_capacity(dim_r * dim_c);
        for i in 0..dim_r {
            for j in 0..dim_c {
                let mut buf: Vec<Complex64> = values.iter().map(|v| v[(i, j)]).collect();
                fft.process(&mut buf);
                spectra.push(buf);
            }
        }
        FourierTable {
            grid,
            dim_r,
            dim_c,
            spectra,
        }
    }

    /// Scalar version.
    pub fn from_scalar(values: &[Complex64]) -> Self {
        let grid = values.len();
        let mut planner = FftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(grid);
        let mut buf = values.to_vec();
        fft.process(&mut buf);
        FourierTable {
            grid,
            dim_r: 1,
            dim_c: 1,
            spectra: vec![buf],
        }
    }

    /// Grid size.
    pub fn grid(&self) -> usize {
        self.grid
    }

    /// `(1/2π)∫ fn(λ) e^{-iλk} dλ` by the trapezoid rule.
    pub fn coeff(&self, k: i64) -> CMat {
        let idx = k.rem_euclid(self.grid as i64) as usize;
        let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        let s = sign / self.grid as f64;
        CMat::from_fn(self.dim_r, self.dim_c, |i, j| {
            self.spectra[i * self.dim_c + j][idx] * s
        })
    }

    /// Scalar coefficient of entry `(0, 0)`.
    pub fn coeff_scalar(&self, k: i64) -> Complex64 {
        let idx = k.rem_euclid(self.grid as i64) as usize;
        let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        self.spectra[0][idx] * (sign / self.grid as f64)
    }
}

fn aliasing_guard(grid: usize, k_min: i64, k_max: i64) -> Result<()> {
    let span = k_max - k_min;
    if span < 0 {
        return Err(GmiError::InvalidSpec(format!(
            "empty lag range {k_min}..{k_max}"
        )));
    }
    if (grid as i64) < 4 * span {
        return Err(GmiError::Aliasing { grid, span });
    }
    Ok(())
}

/// Fourier coefficients `F(k) = (1/2π)∫ fn(λ) e^{-iλk} dλ`, `k = k_min..=k_max`.
pub fn fourier_coeffs(values: &[CMat], k_min: i64, k_max: i64) -> Result<Vec<CMat>> {
    aliasing_guard(values.len(), k_min, k_max)?;
    let table = FourierTable::new(values);
    Ok((k_min..=k_max).map(|k| table.coeff(k)).collect())
}

/// Scalar version of [`fourier_coeffs`].
pub fn fourier_coeffs_scalar(
    values: &[Complex64],
    k_min: i64,
    k_max: i64,
) -> Result<Vec<Complex64>> {
    aliasing_guard(values.len(), k_min, k_max)?;
    let table = FourierTable::from_scalar(values);
    Ok((k_min..=k_max).map(|k| table.coeff_scalar(k)).collect())
}

fn synth_entry(k_min: i64, coeffs: impl Iterator<Item = Complex64>, grid: usize) -> Vec<Complex64> {
    let mut buf = vec![CZERO; grid];
    for (i, c) in coeffs.enumerate() {
        let k = k_min + i as i64;
        let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
        buf[k.rem_euclid(grid as i64) as usize] += c * sign;
    }
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_inverse(grid).process(&mut buf);
    buf
}

/// Samples `Σ_k c(k) e^{iλk}` on the grid for coefficients `k = k_min..`.
pub fn synthesize(k_min: i64, coeffs: &[CMat], grid: usize) -> Vec<CMat> {
    if coeffs.is_empty() {
        return vec![CMat::zeros(0, 0); grid];
    }
    let (r, c) = (coeffs[0].nrows(), coeffs[0].ncols());
    let mut out = vec![CMat::zeros(r, c); grid];
    for i in 0..r {
        for j in 0..c {
            let s = synth_entry(k_min, coeffs.iter().map(|m| m[(i, j)]), grid);
            for (o, v) in out.iter_mut().zip(s) {
                o[(i, j)] = v;
            }
        }
    }
    out
}

/// Scalar version of [`synthesize`].
pub fn synthesize_scalar(k_min: i64, coeffs: &[Complex64], grid: usize) -> Vec<Complex64> {
    synth_entry(k_min, coeffs.iter().copied(), grid)
}

/// Samples the causal transform `Σ_{k≥0} θ(k) e^{-iλk}`.
pub fn synthesize_causal(theta: &[CMat], grid: usize) -> Vec<CMat> {
    let rev: Vec<CMat> = theta.iter().rev().cloned().collect();
    synthesize(-(theta.len() as i64 - 1), &rev, grid)
}

/// Scalar version of [`synthesize_causal`].
pub fn synthesize_causal_scalar(theta: &[Complex64], grid: usize) -> Vec<Complex64> {
    let rev: Vec<Complex64> = theta.iter().rev().copied().collect();
    synthesize_scalar(-(theta.len() as i64 - 1), &rev, grid)
}

/// Structural function `(1/2π)∫ e^{iλm} χ_{μ1} conj(χ_{μ2}) |β|^{-2} f dλ` of
/// the increment sequences with steps `mu1` and `mu2`.
pub fn structural_function(
    f: &SpectralDensityGrid,
    spec: &IncrementSpec,
    m: i64,
    mu1: &[u32],
    mu2: &[u32],
) -> Result<CMat> {
    if !spec.is_integer() {
        return Err(GmiError::InvalidSpec(
            "structural function requires integer orders".into(),
        ));
    }
    let s1 = spec.with_steps(mu1)?;
    let s2 = spec.with_steps(mu2)?;
    let grid = f.grid_size();
    let k1 = kernel_on_grid(&s1, grid);
    let k2 = kernel_on_grid(&s2, grid);
    let t = f.dim();
    let mut acc = CMat::zeros(t, t);
    for (i, fv) in f.values.iter().enumerate() {
        let lam = f.lambda(i);
        let w = Complex64::from_polar(1.0, lam * m as f64) * k1[i] * k2[i].conj();
        let mag = w.norm() * max_abs(fv);
        if !(mag < OVERFLOW_GUARD) {
            return Err(GmiError::Unbounded(format!(
                "structural-function integrand at lambda = {lam}"
            )));
        }
        acc += fv * w;
    }
    Ok(acc / c64(grid as f64, 0.0))
}

/// Autocovariances `R(m) = (1/2π)∫ e^{iλm} w(λ) dλ` of a matrix function for
/// `m = 0..=max_lag` via FFT.
pub fn autocovariances(values: &[CMat], max_lag: usize) -> Vec<CMat> {
    let table = FourierTable::new(values);
    (0..=max_lag as i64).map(|m| table.coeff(-m)).collect()
}

/// Outcome of the minimality check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MinimalityReport {
    /// `(1/2π)∫ Tr[|β|²/|χ|² p^{-1}] dλ` (trapezoid, finite part).
    pub value: f64,
    /// Same quadrature on the half grid.
    pub half_grid_value: f64,
    /// True when finite, below the cap and stable under refinement.
    pub pass: bool,
    /// Frequency where `p` is singular or the kernel vanishes.
    pub offending_lambda: Option<f64>,
    /// Cap used.
    pub cap: f64,
}

/// Minimality check with the default cap.
pub fn minimality_check(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
) -> Result<MinimalityReport> {
    minimality_check_with_cap(f, g, spec, DEFAULT_MINIMALITY_CAP)
}

/// Minimality check: quadrature of `Tr[p^{-1}]/|χ/β|²`, flagged as divergent
/// when singular, above `cap`, or more than doubling from grid `M/2` to `M`.
pub fn minimality_check_with_cap(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    cap: f64,
) -> Result<MinimalityReport> {
    let p = noisy_density(f, g, spec)?;
    let grid = p.grid_size();
    let k2 = kernel_abs2_on_grid(spec, grid);
    let scale = p.sup_norm().max(f64::MIN_POSITIVE);
    let mut offending = None;
    let mut integrand = vec![0.0; grid];
    for (m, pv) in p.values.iter().enumerate() {
        let singular = min_eig(pv) <= 1e-13 * scale || k2[m] <= 1e-300;
        let inv = if singular { None } else { inverse(pv) };
        match inv {
            Some(pi) => integrand[m] = pi.trace().re / k2[m],
            None => {
                if offending.is_none() {
                    offending = Some(p.lambda(m));
                }
            }
        }
    }
    let value = integrand.iter().sum::<f64>() / grid as f64;
    let half = integrand.iter().step_by(2).sum::<f64>() / (grid / 2) as f64;
    let divergent = value > 2.0 * half;
    let pass = offending.is_none() && value.is_finite() && value < cap && !divergent;
    Ok(MinimalityReport {
        value,
        half_grid_value: half,
        pass,
        offending_lambda: offending,
        cap,
    })
}

/// Result of the fractional density transform.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionalTransform {
    /// `f = |χ^{(D)}|^{-2} f̃`.
    pub density: SpectralDensityGrid,
    /// Some aggregated order lies in `(0, 1/2)`.
    pub long_memory: bool,
    /// Number of grid points where the pole cap was active.
    pub capped_points: usize,
}

/// `f(λ) = |χ^{(D)}(e^{-iλ})|^{-2} f̃(λ)` with `|χ^{(D)}|^{-2}` evaluated through
/// the truncated `G⁺` series and capped at `pole_cap`.
pub fn fractional_density_transform(
    f_tilde: &SpectralDensityGrid,
    spec: &IncrementSpec,
    truncation: usize,
    pole_cap: f64,
) -> Result<FractionalTransform> {
    let gp = fractional_expansion(spec, FracSign::Plus, truncation)?;
    let grid = f_tilde.grid_size();
    for (m, v) in f_tilde.values.iter().enumerate() {
        let e = min_eig(v);
        if !(e > 0.0) || !max_abs(v).is_finite() {
            return Err(GmiError::InvalidSpec(format!(
                "short-memory density must be bounded away from zero and infinity (lambda = {})",
                f_tilde.lambda(m)
            )));
        }
    }
    let mut folded = vec![CZERO; grid];
    for (k, &c) in gp.coeffs.iter().enumerate() {
        folded[k % grid] += c64(c, 0.0);
    }
    let vals = synthesize_causal_scalar(&folded, grid);
    let mut capped = 0;
    let w: Vec<f64> = vals
        .iter()
        .map(|v| {
            let x = v.norm_sqr();
            if x > pole_cap || !x.is_finite() {
                capped += 1;
                pole_cap
            } else {
                x
            }
        })
        .collect();
    Ok(FractionalTransform {
        density: f_tilde.weighted(&w, Role::F),
        long_memory: spec.long_memory(),
        capped_points: capped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::increments::Pattern;
    use crate::linalg::CONE;
    use proptest::prelude::*;

    fn one() -> CMat {
        CMat::from_element(1, 1, CONE)
    }

    #[test]
    fn constant_identity() {
        let g = eval_density(&DensityModel::Constant(CMat::identity(2, 2)), 64).unwrap();
        assert_eq!(g.grid_size(), 64);
        assert!(g.values.iter().all(|v| *v == CMat::identity(2, 2)));
        assert!(eval_density(&DensityModel::scalar_constant(1.0), 100).is_err());
        assert!(eval_density(&DensityModel::scalar_constant(1.0), 32).is_err());
    }

    #[test]
    fn ma1_values() {
        let g = eval_density(&DensityModel::scalar_ma(&[1.0, 0.5]), 64).unwrap();
        assert!((g.values[32][(0, 0)].re - 2.25).abs() < 1e-14);
        assert!((g.values[0][(0, 0)].re - 0.25).abs() < 1e-14);
    }

    #[test]
    fn unit_root_denominator_rejected() {
        let m = DensityModel::scalar_arma(1.0, &[1.0], &[1.0, -1.0]);
        assert!(matches!(
            eval_density(&m, 64),
            Err(GmiError::Singular { .. })
        ));
    }

    #[test]
    fn toml_round_trip() {
        let m = DensityModel::Rational {
            num: vec![
                CMat::identity(2, 2),
                CMat::from_row_slice(2, 2, &[c64(0.3, 0.1), CZERO, c64(0.2, 0.0), c64(-0.1, 0.0)]),
            ],
            den: vec![CMat::identity(2, 2)],
        };
        let s = m.to_toml_string().unwrap();
        assert!(s.contains("[density]"));
        assert_eq!(DensityModel::from_toml_str(&s).unwrap(), m);
        let bad = "[density]\nkind = \"rational\"\nT = 2\nnum_coeffs = [[[1.0, 0.0]]]\n";
        assert!(DensityModel::from_toml_str(bad).is_err());
    }

    #[test]
    fn noisy_density_examples() {
        let spec = IncrementSpec::single(1, 1, 1, 1).unwrap();
        let f = eval_density(&DensityModel::scalar_ma(&[1.0, 0.4]), 64).unwrap();
        let z = SpectralDensityGrid::zeros(64, 1, Role::G).unwrap();
        assert_eq!(noisy_density(&f, &z, &spec).unwrap().values, f.values);
        let g = SpectralDensityGrid::constant(&one(), 64, Role::G).unwrap();
        let p = noisy_density(&z, &g, &spec).unwrap();
        // λ_0 = -π: β = -iπ
        assert!((p.values[0][(0, 0)].re - PI * PI).abs() < 1e-12);
        let short = SpectralDensityGrid::zeros(128, 1, Role::G).unwrap();
        assert!(noisy_density(&f, &short, &spec).is_err());
    }

    #[test]
    fn noisy_density_psd_for_random_inputs() {
        let spec = IncrementSpec::single(1, 2, 1, 2).unwrap();
        let a = CMat::from_row_slice(
            2,
            2,
            &[c64(1.0, 0.0), c64(0.3, 0.2), c64(-0.1, 0.4), c64(0.8, 0.0)],
        );
        let b = CMat::from_row_slice(
            2,
            2,
            &[c64(0.2, 0.1), c64(0.0, 0.0), c64(0.5, -0.3), c64(0.1, 0.0)],
        );
        let f = eval_density(
            &DensityModel::Rational {
                num: vec![a.clone(), b.clone()],
                den: vec![],
            },
            128,
        )
        .unwrap();
        let g = eval_density(
            &DensityModel::Rational {
                num: vec![b, a],
                den: vec![],
            },
            128,
        )
        .unwrap();
        let p = noisy_density(&f, &g, &spec).unwrap();
        p.check_psd(1e-10).unwrap();
    }

    #[test]
    fn structural_function_matches_fine_grid() {
        let spec = IncrementSpec::single(1, 1, 1, 1).unwrap();
        let coarse = SpectralDensityGrid::constant(&one(), 1024, Role::F).unwrap();
        let fine = SpectralDensityGrid::constant(&one(), 16384, Role::F).unwrap();
        let a = structural_function(&coarse, &spec, 0, &[1], &[1]).unwrap();
        let b = structural_function(&fine, &spec, 0, &[1], &[1]).unwrap();
        // the integrand has a kink at ±π, so the trapezoid error is O(h²)
        let h = 2.0 * PI / 1024.0;
        assert!(
            (a[(0, 0)] - b[(0, 0)]).norm() < h * h,
            "{} vs {}",
            a[(0, 0)],
            b[(0, 0)]
        );
        assert!(a[(0, 0)].re > 0.0);
    }

    #[test]
    fn structural_function_hermitian_symmetry() {
        let spec = IncrementSpec::single(1, 2, 1, 2).unwrap();
        let a = CMat::from_row_slice(
            2,
            2,
            &[c64(1.0, 0.0), c64(0.3, 0.2), c64(-0.1, 0.4), c64(0.8, 0.0)],
        );
        let f = eval_density(
            &DensityModel::Rational {
                num: vec![a.clone(), a.scale(0.3)],
                den: vec![],
            },
            256,
        )
        .unwrap();
        for m in 0..4 {
            let d1 = structural_function(&f, &spec, m, &[1], &[2]).unwrap();
            let d2 = structural_function(&f, &spec, -m, &[2], &[1]).unwrap();
            assert!(max_abs(&(d1 - d2.adjoint())) < 1e-12);
        }
        let d0 = structural_function(&f, &spec, 0, &[1], &[1]).unwrap();
        assert!(min_eig(&d0) > 0.0);
    }

    #[test]
    fn minimality_examples() {
        let spec = IncrementSpec::single(1, 1, 1, 1).unwrap();
        let id = SpectralDensityGrid::constant(&one(), 1024, Role::F).unwrap();
        assert!(minimality_check(&id, &id, &spec).unwrap().pass);
        let f = eval_density(&DensityModel::scalar_ma(&[1.0, -1.0]), 1024).unwrap();
        let z = SpectralDensityGrid::zeros(1024, 1, Role::G).unwrap();
        let r = minimality_check(&f, &z, &spec).unwrap();
        assert!(!r.pass);
        assert_eq!(r.offending_lambda, Some(0.0));
        let big = id.scaled(1e4);
        assert!(minimality_check(&id, &big, &spec).unwrap().pass);
    }

    #[test]
    fn minimality_value_monotone_in_noise() {
        let spec = IncrementSpec::single(1, 1, 1, 1).unwrap();
        let f = eval_density(&DensityModel::scalar_ma(&[1.0, 0.5]), 512).unwrap();
        let mut prev = f64::INFINITY;
        for s in [0.1, 0.5, 1.0, 3.0] {
            let g = eval_density(&DensityModel::scalar_ma(&[s, 0.2 * s]), 512).unwrap();
            let v = minimality_check(&f, &g, &spec).unwrap().value;
            assert!(v <= prev + 1e-12);
            prev = v;
        }
    }

    #[test]
    fn fourier_examples() {
        let c = CMat::from_row_slice(
            2,
            2,
            &[c64(1.0, 0.0), c64(2.0, 1.0), c64(2.0, -1.0), c64(3.0, 0.0)],
        );
        let vals = vec![c.clone(); 64];
        let fc = fourier_coeffs(&vals, -3, 3).unwrap();
        assert!(max_abs(&(&fc[3] - &c)) < 1e-14);
        assert!(fc
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 3)
            .all(|(_, m)| max_abs(m) < 1e-14));
        let shifted: Vec<CMat> = (0..64)
            .map(|m| &c * Complex64::from_polar(1.0, grid_lambda(m, 64)))
            .collect();
        let fc = fourier_coeffs(&shifted, 0, 2).unwrap();
        assert!(max_abs(&(&fc[1] - &c)) < 1e-13);
        assert!(matches!(
            fourier_coeffs(&vals, -10, 10),
            Err(GmiError::Aliasing { .. })
        ));
    }

    #[test]
    fn fourier_hermitian_symmetry() {
        let f = eval_density(
            &DensityModel::Rational {
                num: vec![
                    CMat::identity(2, 2),
                    CMat::from_row_slice(
                        2,
                        2,
                        &[c64(0.3, 0.1), CZERO, c64(0.2, 0.0), c64(-0.1, 0.0)],
                    ),
                ],
                den: vec![],
            },
            256,
        )
        .unwrap();
        let fc = fourier_coeffs(&f.values, -5, 5).unwrap();
        for k in 0..=5 {
            assert!(max_abs(&(&fc[5 + k] - fc[5 - k].adjoint())) < 1e-13);
        }
    }

    proptest! {
        #[test]
        fn synthesis_round_trip(coeffs in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..=32), k_min in -16i64..0) {
            let grid = 128;
            let c: Vec<Complex64> = coeffs.iter().map(|&(a, b)| c64(a, b)).collect();
            let vals = synthesize_scalar(k_min, &c, grid);
            let k_max = k_min + c.len() as i64 - 1;
            let back = fourier_coeffs_scalar(&vals, k_min, k_max).unwrap();
            for (x, y) in back.iter().zip(&c) {
                prop_assert!((x - y).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn fractional_transform_examples() {
        let spec0 = IncrementSpec::single(1, 1, 1, 1).unwrap();
        let ft = SpectralDensityGrid::constant(&one(), 256, Role::FTilde).unwrap();
        let out = fractional_density_transform(&ft, &spec0, 512, DEFAULT_POLE_CAP).unwrap();
        assert_eq!(out.density.values, ft.values);
        assert!(!out.long_memory);
        let spec = IncrementSpec::new(
            vec![Pattern {
                mu: 1,
                s: 1,
                r_int: 0,
                d_frac: 0.3,
            }],
            1,
        )
        .unwrap();
        let out = fractional_density_transform(&ft, &spec, 8192, DEFAULT_POLE_CAP).unwrap();
        assert!(out.long_memory);
        for m in [192usize, 0] {
            // λ = π/2 and λ = -π
            let lam = grid_lambda(m, 256);
            let v = out.density.values[m][(0, 0)].re * (2.0 * (lam / 2.0).sin()).abs().powf(0.6);
            assert!((v - 1.0).abs() < 1e-2, "lambda {lam}: {v}");
        }
        assert!(out.capped_points <= 1);
    }
}
