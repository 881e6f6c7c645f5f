//! Classical forecasting of linear functionals `Aξ = Σ_{k≥0} a(k)ᵀ ξ(k)` from
//! noisy observations `ζ = ξ + η` at `k ≤ −1`: operator path, factorized path,
//! periodic interleaving and time-domain application.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{GmiError, Result};
use crate::factorize::{
    factorize_increment_weighted, factorize_or_zero, invert_factor, FactorizationResult,
};
use crate::increments::{apply_increment, increment_polynomial, kernel_on_grid, IncrementSpec};
use crate::linalg::{c64, inner, inverse, matvec, CMat, CZERO};
use crate::operators::{
    a_mu_weights, b_and_v_weights, quad_form, solve_c, z_lag, CSolve, LagSequence, PtqTables,
    WeightVector,
};
use crate::spectra::{
    increment_weighted, kernel_abs2_on_grid, minimality_check, noisy_density, synthesize_causal,
    FourierTable, SpectralDensityGrid,
};

/// Relative tolerance for the coefficients of `h β/χ` at nonnegative lags.
pub const SUBSPACE_TOL: f64 = 1e-4;
/// Relative change of `c_μ(0..=N/2)` under `N → 2N` accepted as stable.
pub const TRUNCATION_TOL: f64 = 1e-6;

/// Kind of functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FunctionalKind {
    /// Geometrically decaying weights truncated at a declared tail bound.
    Infinite {
        /// Decay rate of `‖a(k)‖`.
        rate: f64,
        /// Bound on `Σ_{k>N} ‖a(k)‖` of the dropped tail.
        tail_bound: f64,
    },
    /// Weights `a(0..=N)`.
    Finite,
    /// `ξ_p(N)`, `p` one-based.
    Single {
        /// Time index.
        n: usize,
        /// Component.
        p: usize,
    },
}

/// Weights of the functional to be estimated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FunctionalSpec {
    /// Kind.
    pub kind: FunctionalKind,
    /// `a(0..=N)`.
    pub weights: WeightVector,
}

/// Numerical summability sums of `a` and `D^μ a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummabilityReport {
    /// `Σ ‖a(k)‖`.
    pub sum_a: f64,
    /// `Σ (k+1) ‖a(k)‖²`.
    pub weighted_sum_a: f64,
    /// `Σ ‖(D^μ a)_k‖`.
    pub sum_b: f64,
    /// `Σ (k+1) ‖(D^μ a)_k‖²`.
    pub weighted_sum_b: f64,
    /// Declared tail bound of the truncated weights.
    pub tail_bound: f64,
}

impl FunctionalSpec {
    /// Finite functional with weights `a(0..=N)`.
    pub fn finite(weights: WeightVector) -> Result<Self> {
        if weights.is_empty() || weights.start != 0 {
            return Err(GmiError::InvalidSpec(
                "functional weights must be nonempty and start at 0".into(),
            ));
        }
        if weights.entries.iter().any(|e| e.len() != weights.dim) {
            return Err(GmiError::InvalidSpec(
                "functional weights have inconsistent dimension".into(),
            ));
        }
        if weights
            .entries
            .iter()
            .flatten()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(GmiError::InvalidSpec("non-finite functional weight".into()));
        }
        Ok(FunctionalSpec {
            kind: FunctionalKind::Finite,
            weights,
        })
    }

    /// Finite functional from real weights.
    pub fn from_real(a: &[Vec<f64>]) -> Result<Self> {
        Self::finite(WeightVector::from_real(0, a))
    }

    /// Single value `ξ_p(N)` of a `t`-dimensional sequence, `p` one-based.
    pub fn single(n: usize, p: usize, t: usize) -> Result<Self> {
        if p == 0 || p > t {
            return Err(GmiError::InvalidSpec(format!(
                "component {p} outside 1..={t}"
            )));
        }
        let mut w = WeightVector::zeros(0, t, n + 1);
        w.entries[n][p - 1] = c64(1.0, 0.0);
        Ok(FunctionalSpec {
            kind: FunctionalKind::Single { n, p },
            weights: w,
        })
    }

    /// `a(k) = rate^k a0`, truncated once the dropped tail is below `tol`.
    pub fn geometric(a0: &[f64], rate: f64, tol: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(GmiError::InvalidSpec(format!(
                "decay rate {rate} not in [0, 1)"
            )));
        }
        if !(tol > 0.0) || a0.is_empty() {
            return Err(GmiError::InvalidSpec(
                "geometric functional needs a0 and a positive tolerance".into(),
            ));
        }
        let norm0 = a0.iter().map(|x| x * x).sum::<f64>().sqrt();
        let tail = |n: usize| norm0 * rate.powi(n as i32 + 1) / (1.0 - rate);
        let mut n = 0usize;
        while tail(n) > tol {
            n += 1;
            if n > 100_000 {
                return Err(GmiError::InvalidSpec(
                    "geometric functional decays too slowly".into(),
                ));
            }
        }
        let rows: Vec<Vec<f64>> = (0..=n)
            .map(|k| a0.iter().map(|x| x * rate.powi(k as i32)).collect())
            .collect();
        let weights = WeightVector::from_real(0, &rows);
        Ok(FunctionalSpec {
            kind: FunctionalKind::Infinite {
                rate,
                tail_bound: tail(n),
            },
            weights,
        })
    }

    /// Largest index `N` of the stored weights.
    pub fn n(&self) -> usize {
        self.weights.len() - 1
    }

    /// Dimension `T`.
    pub fn dim(&self) -> usize {
        self.weights.dim
    }

    /// Evaluates the summability sums of `a` and `D^μ a` on the stored weights.
    pub fn summability(&self, spec: &IncrementSpec) -> Result<SummabilityReport> {
        let (b, _) = b_and_v_weights(&self.weights, spec)?;
        let sums = |w: &WeightVector| {
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for (k, e) in w.entries.iter().enumerate() {
                let n2: f64 = e.iter().map(|z| z.norm_sqr()).sum();
                s1 += n2.sqrt();
                s2 += (k as f64 + 1.0) * n2;
            }
            (s1, s2)
        };
        let (sum_a, weighted_sum_a) = sums(&self.weights);
        let (sum_b, weighted_sum_b) = sums(&b);
        let tail_bound = match self.kind {
            FunctionalKind::Infinite { tail_bound, .. } => tail_bound,
            _ => 0.0,
        };
        let report = SummabilityReport {
            sum_a,
            weighted_sum_a,
            sum_b,
            weighted_sum_b,
            tail_bound,
        };
        if ![sum_a, weighted_sum_a, sum_b, weighted_sum_b]
            .iter()
            .all(|x| x.is_finite())
        {
            return Err(GmiError::InvalidSpec(
                "functional weights are not summable".into(),
            ));
        }
        Ok(report)
    }
}

/// Options of the operator path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForecastOptions {
    /// Truncation `N` of the coefficient system.
    pub trunc: usize,
    /// Re-solve at `2N` and compare.
    pub check_truncation: bool,
    /// Number of filter lags `s(−1..=−k_max)`; default `2(N+1)`.
    pub filter_lags: Option<usize>,
}

impl ForecastOptions {
    /// Defaults for truncation `n`.
    pub fn new(n: usize) -> Self {
        ForecastOptions {
            trunc: n,
            check_truncation: true,
            filter_lags: None,
        }
    }
}

/// Truncation and conditioning report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDiagnostics {
    /// Method label.
    pub method: String,
    /// Truncation `N` (operator path) or factor length `K`.
    pub trunc: usize,
    /// Grid size.
    pub grid: usize,
    /// Pivot-ratio condition estimate of `P`.
    pub cond_estimate: Option<f64>,
    /// Relative residual of the dense solve.
    pub solve_residual: Option<f64>,
    /// `‖coefficients of hβ/χ at k ≥ 0‖ / ‖B‖`.
    pub subspace_residual: f64,
    /// Relative change of `c_μ(0..=N/2)` when `N` is doubled.
    pub truncation_change: Option<f64>,
    /// True when the doubling check passed or was not applicable.
    pub truncation_stable: bool,
    /// MSE from quadrature of the value functional at the computed `h`.
    pub quadrature_mse: f64,
    /// Projection part `⟨r, P^{-1} r⟩` of the MSE.
    pub projection_part: f64,
    /// `⟨Q a, a⟩` part of the MSE.
    pub noise_part: f64,
    /// Reason time-domain weights are unavailable, if any.
    pub filter_refusal: Option<String>,
}

/// Solution of a forecasting problem.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastSolution {
    /// Dimension `T`.
    pub dim: usize,
    /// Grid size.
    pub grid: usize,
    /// `c_μ(k)`.
    pub c_mu: WeightVector,
    /// `h(λ_m)`.
    pub h_samples: Vec<Vec<Complex64>>,
    /// `h(λ_m) β/χ`, filled at removable singularities.
    pub h_over_kernel: Vec<Vec<Complex64>>,
    /// `s(k)`, `k = −k_max..=−1`; empty when refused.
    pub filter_weights: WeightVector,
    /// `v(k)`, `k = −n(γ)..=−1`.
    pub v_weights: WeightVector,
    /// `b = D^μ a`.
    pub b_weights: WeightVector,
    /// Mean-square error `Δ`.
    pub mse: f64,
    /// Diagnostics.
    pub diagnostics: ForecastDiagnostics,
}

fn cvec_json(v: &[Complex64]) -> serde_json::Value {
    serde_json::json!({
        "re": v.iter().map(|z| z.re).collect::<Vec<_>>(),
        "im": v.iter().map(|z| z.im).collect::<Vec<_>>(),
    })
}

fn weights_json(w: &WeightVector) -> serde_json::Value {
    let rows: Vec<serde_json::Value> = w
        .entries
        .iter()
        .enumerate()
        .map(|(i, e)| {
            let mut o = cvec_json(e);
            o["k"] = serde_json::json!(w.start + i as i64);
            o
        })
        .collect();
    serde_json::Value::Array(rows)
}

impl ForecastSolution {
    /// Multiplies `h`, `c`, `s` and `v` by `s` and the MSE by `s²`.
    pub fn scaled(&self, s: f64) -> Self {
        let sc = c64(s, 0.0);
        let scale_rows = |rows: &Vec<Vec<Complex64>>| -> Vec<Vec<Complex64>> {
            rows.iter()
                .map(|r| r.iter().map(|z| z * sc).collect())
                .collect()
        };
        let mut out = self.clone();
        out.c_mu = self.c_mu.scaled(sc);
        out.h_samples = scale_rows(&self.h_samples);
        out.h_over_kernel = scale_rows(&self.h_over_kernel);
        out.filter_weights = self.filter_weights.scaled(sc);
        out.v_weights = self.v_weights.scaled(sc);
        out.b_weights = self.b_weights.scaled(sc);
        out.mse = self.mse * s * s;
        out.diagnostics.quadrature_mse *= s * s;
        out.diagnostics.projection_part *= s * s;
        out.diagnostics.noise_part *= s * s;
        out
    }

    /// JSON export `{mse, c, s, v, h}`.
    pub fn to_json(&self) -> serde_json::Value {
        let lambda: Vec<f64> = (0..self.grid)
            .map(|m| crate::spectra::grid_lambda(m, self.grid))
            .collect();
        let h: Vec<serde_json::Value> = (0..self.dim)
            .map(|p| {
                let col: Vec<Complex64> = self.h_samples.iter().map(|r| r[p]).collect();
                cvec_json(&col)
            })
            .collect();
        serde_json::json!({
            "mse": self.mse,
            "dim": self.dim,
            "c": weights_json(&self.c_mu),
            "s": weights_json(&self.filter_weights),
            "v": weights_json(&self.v_weights),
            "h": {"lambda": lambda, "components": h},
            "diagnostics": serde_json::to_value(&self.diagnostics).unwrap_or(serde_json::Value::Null),
        })
    }
}

/// Quadrature of the error variance of an arbitrary characteristic:
/// `Δ(h; f, g) = (1/2π)∫ uᵀ f ū + (uβ − A)ᵀ g conj(uβ − A)` with
/// `u = Bκ − h`, evaluated through `hκ^{-1}` so that only `|κ|² f` and `χ`
/// appear.
#[derive(Debug, Clone)]
pub struct ValueFunctional {
    a_grid: Vec<CMat>,
    b_grid: Vec<CMat>,
    chi: Vec<Complex64>,
    k2: Vec<f64>,
    dim: usize,
}

impl ValueFunctional {
    /// Precomputes `A`, `B` and the transfer functions on the grid.
    pub fn new(spec: &IncrementSpec, fnl: &FunctionalSpec, grid: usize) -> Result<Self> {
        let (b, _) = b_and_v_weights(&fnl.weights, spec)?;
        let chi = (0..grid)
            .map(|m| crate::increments::chi_transfer(spec, crate::spectra::grid_lambda(m, grid)))
            .collect();
        Ok(ValueFunctional {
            a_grid: fnl.weights.synthesize(grid),
            b_grid: b.synthesize(grid),
            chi,
            k2: kernel_abs2_on_grid(spec, grid),
            dim: fnl.dim(),
        })
    }

    /// `|χ|²/|β|²` on the grid.
    pub fn kernel_abs2(&self) -> &[f64] {
        &self.k2
    }

    /// Error vectors `d = B − hβ/χ` and `e = χ d − A` at each grid point.
    pub fn error_vectors(&self, h_over_kernel: &[Vec<Complex64>]) -> Vec<(CMat, CMat)> {
        (0..self.a_grid.len())
            .map(|m| {
                let hk = CMat::from_column_slice(self.dim, 1, &h_over_kernel[m]);
                let d = &self.b_grid[m] - hk;
                let e = &d * self.chi[m] - &self.a_grid[m];
                (d, e)
            })
            .collect()
    }

    /// `Δ(h; f, g)` for `h β/χ` sampled on the grid.
    pub fn eval(
        &self,
        h_over_kernel: &[Vec<Complex64>],
        f: &SpectralDensityGrid,
        g: &SpectralDensityGrid,
    ) -> f64 {
        let grid = self.a_grid.len();
        let mut acc = 0.0;
        for m in 0..grid {
            let hk = CMat::from_column_slice(self.dim, 1, &h_over_kernel[m]);
            let d = &self.b_grid[m] - hk;
            let first =
                (d.transpose() * f.values[m].scale(self.k2[m]) * d.map(|z| z.conj()))[(0, 0)].re;
            let e = d * self.chi[m] - &self.a_grid[m];
            let second = (e.transpose() * &g.values[m] * e.map(|z| z.conj()))[(0, 0)].re;
            acc += first + second;
        }
        acc / grid as f64
    }
}

fn check_inputs(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    fnl: &FunctionalSpec,
) -> Result<()> {
    spec.validate()?;
    if !spec.is_integer() {
        return Err(GmiError::InvalidSpec(
            "forecasting requires integer increment orders".into(),
        ));
    }
    if f.grid_size() != g.grid_size() {
        return Err(GmiError::GridMismatch(format!(
            "f has {} points, g has {}",
            f.grid_size(),
            g.grid_size()
        )));
    }
    if f.dim() != spec.period || g.dim() != spec.period || fnl.dim() != spec.period {
        return Err(GmiError::InvalidSpec(format!(
            "dimension mismatch: f {}, g {}, functional {}, period {}",
            f.dim(),
            g.dim(),
            fnl.dim(),
            spec.period
        )));
    }
    fnl.summability(spec)?;
    let report = minimality_check(f, g, spec)?;
    if !report.pass {
        return Err(GmiError::Minimality(format!(
            "integral {:.3e} (half grid {:.3e}) at lambda = {:?}",
            report.value, report.half_grid_value, report.offending_lambda
        )));
    }
    Ok(())
}

struct OperatorSolve {
    cs: CSolve,
    noise_part: f64,
}

fn solve_at(
    tables: &PtqTables,
    b: &WeightVector,
    a_mu: &WeightVector,
    a: &WeightVector,
    n: usize,
) -> Result<OperatorSolve> {
    let grid = tables.grid;
    let span = n + a_mu.len();
    if grid < 8 * (n + 1) || grid < 4 * span {
        return Err(GmiError::Aliasing {
            grid,
            span: span as i64,
        });
    }
    let p = tables.p_op(n + 1, n + 1, n);
    let t = tables.t_op(n + 1, a_mu.len(), n);
    let cs = solve_c(&p, b, &t, a_mu)?;
    let q = tables.q_op(a.len(), a.len(), n);
    let noise_part = quad_form(&q, a).re;
    Ok(OperatorSolve { cs, noise_part })
}

fn col(v: &[Complex64]) -> CMat {
    CMat::from_column_slice(v.len(), 1, v)
}

fn subspace_residual(hk: &[Vec<Complex64>], b: &WeightVector) -> (FourierTable, f64) {
    let cols: Vec<CMat> = hk.iter().map(|r| col(r)).collect();
    let table = FourierTable::new(&cols);
    let grid = hk.len() as i64;
    let mut pos = 0.0;
    for k in 0..grid / 2 {
        pos += table.coeff(k).iter().map(|z| z.norm_sqr()).sum::<f64>();
    }
    let denom = b.norm_sqr().max(1e-300);
    (table, (pos / denom).sqrt())
}

fn filter_from_table(table: &FourierTable, dim: usize, k_max: usize) -> WeightVector {
    let mut s = WeightVector::zeros(-(k_max as i64), dim, k_max);
    for j in 1..=k_max as i64 {
        let c = table.coeff(-j);
        s.entries[(k_max as i64 - j) as usize] = c.iter().copied().collect();
    }
    s
}

fn refusal(spec: &IncrementSpec, residual: f64) -> Option<String> {
    if spec.has_uncancelled_zeros() {
        Some("increment steps above one leave zeros of chi uncancelled by beta".into())
    } else if !(residual <= SUBSPACE_TOL) {
        Some(format!(
            "subspace residual {residual:.3e} above {SUBSPACE_TOL:e}; increase the truncation"
        ))
    } else {
        None
    }
}

/// Operator-path solution with explicit options.
pub fn spectral_characteristic_with(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    fnl: &FunctionalSpec,
    opts: &ForecastOptions,
) -> Result<ForecastSolution> {
    check_inputs(f, g, spec, fnl)?;
    let n = opts.trunc;
    if n < fnl.n() {
        return Err(GmiError::InvalidSpec(format!(
            "truncation {n} below functional length {}",
            fnl.n()
        )));
    }
    let grid = f.grid_size();
    let dim = spec.period;
    let e = increment_polynomial(spec)?;
    let a = &fnl.weights;
    let (b, v) = b_and_v_weights(a, spec)?;
    let a_mu = a_mu_weights(a, &e);
    let p = noisy_density(f, g, spec)?;
    let w = increment_weighted(&p, spec);
    let k2 = kernel_abs2_on_grid(spec, grid);
    let tables = PtqTables::from_parts(f, g, &w, &k2)?;
    let sol = solve_at(&tables, &b, &a_mu, a, n)?;
    let projection_part = sol.cs.r.inner(&sol.cs.c).re;
    let mse_raw = projection_part + sol.noise_part;
    let scale = (projection_part.abs() + sol.noise_part.abs()).max(1e-300);
    if mse_raw < -1e-8 * scale {
        return Err(GmiError::NotPsd(format!(
            "negative mean-square error {mse_raw:e}"
        )));
    }

    let (truncation_change, truncation_stable) =
        if opts.check_truncation && grid >= 8 * (2 * n + 1) && grid >= 4 * (2 * n + a_mu.len()) {
            let s2 = solve_at(&tables, &b, &a_mu, a, 2 * n)?;
            let head = n / 2;
            let cmax = sol.cs.c.max_abs().max(1.0);
            let mut d = 0.0_f64;
            for k in 0..=head as i64 {
                let x = sol.cs.c.get(k);
                let y = s2.cs.c.get(k);
                for (u, w) in x.iter().zip(&y) {
                    d = d.max((u - w).norm());
                }
            }
            let rel = d / cmax;
            (Some(rel), rel < TRUNCATION_TOL)
        } else {
            (None, true)
        };

    // h β/χ = B − W^{-T} (gᵀ A_μ + C)
    let bg = b.synthesize(grid);
    let ag = a_mu.synthesize(grid);
    let cg = sol.cs.c.synthesize(grid);
    let kernel = kernel_on_grid(spec, grid);
    let mut hk = Vec::with_capacity(grid);
    let mut h = Vec::with_capacity(grid);
    for m in 0..grid {
        let wi = inverse(&w.values[m]).ok_or(GmiError::Singular {
            context: "observed increment density".into(),
            lambda: w.lambda(m),
        })?;
        let rhs = g.values[m].transpose() * &ag[m] + &cg[m];
        let x = &bg[m] - wi.transpose() * rhs;
        let xv: Vec<Complex64> = x.iter().copied().collect();
        h.push(xv.iter().map(|z| z * kernel[m]).collect());
        hk.push(xv);
    }
    let (table, sub_res) = subspace_residual(&hk, &b);
    let k_max = opts.filter_lags.unwrap_or(2 * (n + 1)).min(grid / 4);
    let filter_refusal = refusal(spec, sub_res);
    let filter_weights = if filter_refusal.is_none() {
        filter_from_table(&table, dim, k_max)
    } else {
        WeightVector::empty(-1, dim)
    };
    let quadrature_mse = ValueFunctional::new(spec, fnl, grid)?.eval(&hk, f, g);

    Ok(ForecastSolution {
        dim,
        grid,
        c_mu: sol.cs.c,
        h_samples: h,
        h_over_kernel: hk,
        filter_weights,
        v_weights: v,
        b_weights: b,
        mse: mse_raw.max(0.0),
        diagnostics: ForecastDiagnostics {
            method: "operator".into(),
            trunc: n,
            grid,
            cond_estimate: Some(sol.cs.cond_estimate),
            solve_residual: Some(sol.cs.residual),
            subspace_residual: sub_res,
            truncation_change,
            truncation_stable,
            quadrature_mse,
            projection_part,
            noise_part: sol.noise_part,
            filter_refusal,
        },
    })
}

/// Spectral characteristic and MSE of the optimal estimate of `Aξ` at
/// truncation `n_trunc`.
pub fn spectral_characteristic(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    fnl: &FunctionalSpec,
    n_trunc: usize,
) -> Result<ForecastSolution> {
    spectral_characteristic_with(f, g, spec, fnl, &ForecastOptions::new(n_trunc))
}

/// Finite functional `A_N ξ`; rejects infinite-kind functionals.
pub fn spectral_characteristic_finite(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    fnl: &FunctionalSpec,
    n_trunc: usize,
) -> Result<ForecastSolution> {
    if let FunctionalKind::Infinite { .. } = fnl.kind {
        return Err(GmiError::InvalidSpec(
            "finite forecast given an infinite functional".into(),
        ));
    }
    spectral_characteristic(f, g, spec, fnl, n_trunc)
}

/// Estimate of the single value `ξ_p(N)`, `p` one-based.
pub fn single_value_forecast(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    n: usize,
    p: usize,
    n_trunc: usize,
) -> Result<ForecastSolution> {
    let fnl = FunctionalSpec::single(n, p, spec.period)?;
    spectral_characteristic(f, g, spec, &fnl, n_trunc)
}

fn mv_t(m: &CMat, v: &[Complex64]) -> Vec<Complex64> {
    matvec(&m.transpose(), v)
}

fn add_to(acc: &mut [Complex64], x: &[Complex64], s: Complex64) {
    for (a, b) in acc.iter_mut().zip(x) {
        *a += b * s;
    }
}

/// Intermediate sequences of the factorized path.
#[derive(Debug, Clone)]
pub struct FactorizedParts {
    /// Factor `θ` of `W = |χ/β|² p`.
    pub theta: FactorizationResult,
    /// Causal inverse `ψ`.
    pub psi: FactorizationResult,
    /// Factor `φ` of `g`.
    pub phi: FactorizationResult,
    /// `e(m) = Σ_j Z(m−j) a_μ(j)` for `m = e.start..`.
    pub e: WeightVector,
    /// `u_m = Σ_p θᵀ(p) b(p+m)`, `m ≥ 0`.
    pub u: WeightVector,
    /// `x_m = Σ_p θᵀ(m+p) b(p) − e(−m)`, `m ≥ 1`.
    pub x: WeightVector,
    /// `b = D^μ a`.
    pub b: WeightVector,
    /// `a_μ`.
    pub a_mu: WeightVector,
}

impl FactorizedParts {
    /// Factorizes and assembles the sequences for factor length `k`.
    pub fn new(
        f: &SpectralDensityGrid,
        g: &SpectralDensityGrid,
        spec: &IncrementSpec,
        fnl: &FunctionalSpec,
        k: usize,
    ) -> Result<Self> {
        let theta = factorize_increment_weighted(f, g, spec, k)?;
        let psi = invert_factor(&theta, k)?;
        let phi = factorize_or_zero(g, k)?;
        Self::from_factors(theta, psi, phi, spec, fnl)
    }

    /// Assembles the sequences from given factors.
    pub fn from_factors(
        theta: FactorizationResult,
        psi: FactorizationResult,
        phi: FactorizationResult,
        spec: &IncrementSpec,
        fnl: &FunctionalSpec,
    ) -> Result<Self> {
        let dim = fnl.dim();
        let e_poly = increment_polynomial(spec)?;
        let a = &fnl.weights;
        let (b, _) = b_and_v_weights(a, spec)?;
        let a_mu = a_mu_weights(a, &e_poly);
        let k = psi.coeffs.len() as i64 - 1;
        let kg = phi.coeffs.len() as i64 - 1;
        let j = a_mu.len() as i64;
        let glags = LagSequence::from_factor(&phi, kg as usize);
        // Z(n) vanishes outside [−kg, k + kg]
        let zmin = -kg;
        let zmax = k + kg;
        let zl: Vec<CMat> = (zmin..=zmax).map(|n| z_lag(&psi, &glags, n)).collect();
        let e_lo = zmin;
        let e_hi = zmax + j - 1;
        let mut e = WeightVector::zeros(e_lo, dim, (e_hi - e_lo + 1) as usize);
        for m in e_lo..=e_hi {
            let mut acc = vec![CZERO; dim];
            for jj in 0..j {
                let n = m - jj;
                if n < zmin || n > zmax {
                    continue;
                }
                let y = matvec(&zl[(n - zmin) as usize], &a_mu.entries[jj as usize]);
                add_to(&mut acc, &y, c64(1.0, 0.0));
            }
            e.entries[(m - e_lo) as usize] = acc;
        }
        let kt = theta.coeffs.len() as i64 - 1;
        let nb = b.len() as i64;
        let mut u = WeightVector::zeros(0, dim, nb as usize);
        for m in 0..nb {
            let mut acc = vec![CZERO; dim];
            for p in 0..=kt {
                if p + m >= nb {
                    break;
                }
                add_to(
                    &mut acc,
                    &mv_t(&theta.coeffs[p as usize], &b.entries[(p + m) as usize]),
                    c64(1.0, 0.0),
                );
            }
            u.entries[m as usize] = acc;
        }
        let x_hi = kt.max(-e_lo).max(1);
        let mut x = WeightVector::zeros(1, dim, x_hi as usize);
        for m in 1..=x_hi {
            let mut acc = vec![CZERO; dim];
            for p in 0..nb {
                if m + p > kt {
                    break;
                }
                add_to(
                    &mut acc,
                    &mv_t(&theta.coeffs[(m + p) as usize], &b.entries[p as usize]),
                    c64(1.0, 0.0),
                );
            }
            add_to(&mut acc, &e.get(-m), c64(-1.0, 0.0));
            x.entries[(m - 1) as usize] = acc;
        }
        Ok(FactorizedParts {
            theta,
            psi,
            phi,
            e,
            u,
            x,
            b,
            a_mu,
        })
    }

    /// `‖Φᵀ w‖² = Σ_{m≥0} |Σ_k φᵀ(k) w(k+m)|²` and
    /// `‖Φ̃ w‖₁² = Σ_{m≥1} |Σ_k φᵀ(k+m) w(k)|²`.
    pub fn phi_norms(&self, w: &WeightVector) -> (f64, f64) {
        let kg = self.phi.coeffs.len() as i64;
        let nw = w.len() as i64;
        let mut first = 0.0;
        for m in 0..nw {
            let mut acc = vec![CZERO; w.dim];
            for k in 0..kg.min(nw - m) {
                add_to(
                    &mut acc,
                    &mv_t(&self.phi.coeffs[k as usize], &w.entries[(k + m) as usize]),
                    c64(1.0, 0.0),
                );
            }
            first += acc.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        let mut second = 0.0;
        for m in 1..kg {
            let mut acc = vec![CZERO; w.dim];
            for k in 0..nw.min(kg - m) {
                add_to(
                    &mut acc,
                    &mv_t(&self.phi.coeffs[(k + m) as usize], &w.entries[k as usize]),
                    c64(1.0, 0.0),
                );
            }
            second += acc.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        (first, second)
    }

    fn e_plus(&self) -> WeightVector {
        let hi = self.e.end().max(0);
        let mut out = WeightVector::zeros(0, self.e.dim, (hi + 1) as usize);
        for m in 0..=hi {
            out.entries[m as usize] = self.e.get(m);
        }
        out
    }

    /// `Σ_{m≤−1} |e(m)|²`.
    fn e_minus_norm(&self) -> f64 {
        (self.e.start..0)
            .map(|m| self.e.get(m).iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum()
    }

    /// `‖Φᵀa‖² + ‖Φ̃a‖₁² − Σ_{m≤−1}|e(m)|² + ‖u‖² − 2 Re⟨u, e₊⟩`.
    pub fn mse(&self, a: &WeightVector) -> f64 {
        let (p1, p2) = self.phi_norms(a);
        let ep = self.e_plus();
        p1 + p2 - self.e_minus_norm() + self.u.norm_sqr() - 2.0 * self.u.inner(&ep).re
    }

    /// The printed factorized form: `‖Φᵀa_μ‖² + ‖Φ̃a_μ‖₁² + ⟨u − ψ̄C, u⟩ −
    /// ⟨u, e₊⟩ − ⟨e₊, ψ̄C⟩₁` with `(ψ̄C)_m = e(−m)`, `m ≥ 0`.
    pub fn mse_literal(&self) -> Complex64 {
        let (p1, p2) = self.phi_norms(&self.a_mu);
        let ep = self.e_plus();
        let hi = self.u.end().max(-self.e.start);
        let mut psic = WeightVector::zeros(0, self.e.dim, (hi + 1) as usize);
        for m in 0..=hi {
            psic.entries[m as usize] = self.e.get(-m);
        }
        let mut um = WeightVector::zeros(0, self.e.dim, (hi + 1) as usize);
        for m in 0..=hi {
            let uu = self.u.get(m);
            let pc = psic.get(m);
            um.entries[m as usize] = uu.iter().zip(&pc).map(|(x, y)| x - y).collect();
        }
        let t1 = um.inner(&self.u);
        let t2 = self.u.inner(&ep);
        let hi1 = ep.end().max(psic.end());
        let t3: Complex64 = (1..=hi1).map(|k| inner(&ep.get(k), &psic.get(k))).sum();
        c64(p1 + p2, 0.0) + t1 - t2 - t3
    }

    /// `c = Θ̄ (u − e₊)` for `k = 0..=k_max`.
    pub fn c_mu(&self, k_max: usize) -> WeightVector {
        let dim = self.e.dim;
        let ep = self.e_plus();
        let mut c = WeightVector::zeros(0, dim, k_max + 1);
        for k in 0..=k_max as i64 {
            let mut acc = vec![CZERO; dim];
            for l in 0..=k {
                let y: Vec<Complex64> = self
                    .u
                    .get(l)
                    .iter()
                    .zip(ep.get(l))
                    .map(|(x, z)| x - z)
                    .collect();
                let th = self.theta.get(k - l).map(|z| z.conj());
                add_to(&mut acc, &matvec(&th, &y), c64(1.0, 0.0));
            }
            c.entries[k as usize] = acc;
        }
        c
    }

    /// `s(−j) = Σ_{m=1}^{j} ψᵀ(j−m) x_m`, `j = 1..=k_max`.
    pub fn filter_weights(&self, k_max: usize) -> WeightVector {
        let dim = self.e.dim;
        let mut s = WeightVector::zeros(-(k_max as i64), dim, k_max);
        for j in 1..=k_max as i64 {
            let mut acc = vec![CZERO; dim];
            for m in 1..=j {
                let xm = self.x.get(m);
                if xm.iter().all(|z| *z == CZERO) {
                    continue;
                }
                add_to(&mut acc, &mv_t(&self.psi.get(j - m), &xm), c64(1.0, 0.0));
            }
            s.entries[(k_max as i64 - j) as usize] = acc;
        }
        s
    }

    /// `Ψᵀ(e^{-iλ}) Σ_{m≥1} x_m e^{-iλm}` on the grid.
    pub fn h_over_kernel(&self, grid: usize) -> Vec<Vec<Complex64>> {
        let dim = self.e.dim;
        let psit: Vec<CMat> = self.psi.coeffs.iter().map(|p| p.transpose()).collect();
        let pg = synthesize_causal(&psit, grid);
        let mut xs: Vec<CMat> = vec![CMat::zeros(dim, 1)];
        xs.extend(self.x.entries.iter().map(|v| col(v)));
        let xg = synthesize_causal(&xs, grid);
        pg.iter()
            .zip(&xg)
            .map(|(p, x)| (p * x).iter().copied().collect())
            .collect()
    }
}

/// Factorized-path solution with factor length `k`.
pub fn factorized_forecast(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    fnl: &FunctionalSpec,
    k: usize,
) -> Result<ForecastSolution> {
    check_inputs(f, g, spec, fnl)?;
    let parts = FactorizedParts::new(f, g, spec, fnl, k)?;
    solution_from_parts(&parts, f, g, spec, fnl, k)
}

/// The printed factorized MSE form (complex; see [`FactorizedParts::mse_literal`]).
pub fn factorized_mse_literal(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    fnl: &FunctionalSpec,
    k: usize,
) -> Result<Complex64> {
    check_inputs(f, g, spec, fnl)?;
    Ok(FactorizedParts::new(f, g, spec, fnl, k)?.mse_literal())
}

fn solution_from_parts(
    parts: &FactorizedParts,
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    fnl: &FunctionalSpec,
    k: usize,
) -> Result<ForecastSolution> {
    let grid = f.grid_size();
    let dim = spec.period;
    let (_, v) = b_and_v_weights(&fnl.weights, spec)?;
    let hk = parts.h_over_kernel(grid);
    let kernel = kernel_on_grid(spec, grid);
    let h: Vec<Vec<Complex64>> = hk
        .iter()
        .zip(&kernel)
        .map(|(r, kk)| r.iter().map(|z| z * kk).collect())
        .collect();
    let (_, sub_res) = subspace_residual(&hk, &parts.b);
    let filter_refusal = refusal(spec, sub_res);
    let filter_weights = if filter_refusal.is_none() {
        parts.filter_weights(k.min(grid / 4))
    } else {
        WeightVector::empty(-1, dim)
    };
    let mse = parts.mse(&fnl.weights);
    let ep_part =
        parts.u.norm_sqr() - 2.0 * parts.u.inner(&parts.e_plus()).re + parts.e_plus().norm_sqr();
    let quadrature_mse = ValueFunctional::new(spec, fnl, grid)?.eval(&hk, f, g);
    Ok(ForecastSolution {
        dim,
        grid,
        c_mu: parts.c_mu(k),
        h_samples: h,
        h_over_kernel: hk,
        filter_weights,
        v_weights: v,
        b_weights: parts.b.clone(),
        mse: mse.max(0.0),
        diagnostics: ForecastDiagnostics {
            method: "factorized".into(),
            trunc: k,
            grid,
            cond_estimate: None,
            solve_residual: None,
            subspace_residual: sub_res,
            truncation_change: None,
            truncation_stable: true,
            quadrature_mse,
            projection_part: ep_part,
            noise_part: mse - ep_part,
            filter_refusal,
        },
    })
}

/// Coefficients `s(k)`, `k = −k_max..=−1`, of `h β/χ` at negative lags.
pub fn extract_filter_weights(
    solution: &ForecastSolution,
    spec: &IncrementSpec,
    k_max: usize,
) -> Result<WeightVector> {
    if spec.has_uncancelled_zeros() {
        return Err(GmiError::Unbounded(
            "beta/chi unbounded: increment steps above one".into(),
        ));
    }
    if !(solution.diagnostics.subspace_residual <= SUBSPACE_TOL) {
        return Err(GmiError::Unbounded(format!(
            "characteristic outside the observation subspace (residual {:.3e})",
            solution.diagnostics.subspace_residual
        )));
    }
    if 4 * k_max > solution.grid {
        return Err(GmiError::Aliasing {
            grid: solution.grid,
            span: k_max as i64,
        });
    }
    let cols: Vec<CMat> = solution.h_over_kernel.iter().map(|r| col(r)).collect();
    let table = FourierTable::new(&cols);
    Ok(filter_from_table(&table, solution.dim, k_max))
}

/// Composite level weights `w(m)`, `m = −l..=−1`, with `Âξ = Σ w(m)ᵀ ζ(m)`:
/// `w(m) = Σ_j e(j) s(m+j) − v(m)`.
pub fn level_weights(
    s: &WeightVector,
    v: &WeightVector,
    spec: &IncrementSpec,
    l: usize,
) -> Result<WeightVector> {
    let e = increment_polynomial(spec)?;
    let dim = s.dim.max(v.dim);
    let mut w = WeightVector::zeros(-(l as i64), dim, l);
    for m in -(l as i64)..=-1 {
        let mut acc = vec![CZERO; dim];
        for j in 0..=e.degree() as i64 {
            if m + j <= -1 {
                add_to(&mut acc, &s.get(m + j), c64(e.get(j), 0.0));
            }
        }
        add_to(&mut acc, &v.get(m), c64(-1.0, 0.0));
        w.entries[(m + l as i64) as usize] = acc;
    }
    Ok(w)
}

/// `Σ_{k≤−1} s(k)ᵀ χ(ζ)(k) − Σ_{k=−n(γ)}^{−1} v(k)ᵀ ζ(k)` for observations
/// `ζ(−L..=−1)` given oldest first.
pub fn apply_filter(
    observations: &[Vec<f64>],
    s: &WeightVector,
    v: &WeightVector,
    spec: &IncrementSpec,
) -> Result<Complex64> {
    let n = spec.n_gamma();
    let k_max = s.len();
    let l = observations.len();
    if l < k_max + n || l < n {
        return Err(GmiError::InsufficientData(format!(
            "need {} observations, got {l}",
            k_max + n
        )));
    }
    if observations.iter().any(|o| o.len() != spec.period) {
        return Err(GmiError::InvalidSpec(
            "observation dimension differs from the period".into(),
        ));
    }
    let incr = apply_increment(observations, spec)?;
    // incr[i] is the increment at time index −L + n + i
    let mut acc = CZERO;
    for k in -(k_max as i64)..=-1 {
        let i = (k + l as i64 - n as i64) as usize;
        let sk = s.get(k);
        acc += sk
            .iter()
            .zip(&incr[i])
            .map(|(x, y)| x * y)
            .sum::<Complex64>();
    }
    for k in -(n as i64)..=-1 {
        let vk = v.get(k);
        let z = &observations[(k + l as i64) as usize];
        acc -= vk.iter().zip(z).map(|(x, y)| x * y).sum::<Complex64>();
    }
    Ok(acc)
}

/// Applies the solution's filter to observations `ζ(−L..=−1)`, oldest first.
pub fn apply_forecast(
    observations: &[Vec<f64>],
    solution: &ForecastSolution,
    spec: &IncrementSpec,
) -> Result<Complex64> {
    if let Some(reason) = &solution.diagnostics.filter_refusal {
        return Err(GmiError::Unbounded(reason.clone()));
    }
    apply_filter(
        observations,
        &solution.filter_weights,
        &solution.v_weights,
        spec,
    )
}

/// `ξ_p(m) = ϑ(mT + p − 1)`; an incomplete last block is padded with NaN.
pub fn interleave(series: &[f64], t: usize) -> Result<Vec<Vec<f64>>> {
    if t == 0 {
        return Err(GmiError::InvalidSpec("period must be positive".into()));
    }
    Ok(series
        .chunks(t)
        .map(|c| {
            let mut v = c.to_vec();
            v.resize(t, f64::NAN);
            v
        })
        .collect())
}

/// Inverse of [`interleave`]; trailing NaN padding is dropped.
pub fn deinterleave(vectors: &[Vec<f64>]) -> Vec<f64> {
    let mut out: Vec<f64> = vectors.iter().flatten().copied().collect();
    while out.last().map(|x| x.is_nan()).unwrap_or(false) {
        out.pop();
    }
    out
}

/// Lifts scalar weights `a(0..=M)` of a period-`t` sequence to the vector
/// functional `a_p(m) = a(mT + p − 1)`, zero beyond `M`.
pub fn lift_functional(a_scalar: &[f64], t: usize) -> Result<FunctionalSpec> {
    if t == 0 {
        return Err(GmiError::InvalidSpec("period must be positive".into()));
    }
    if a_scalar.is_empty() {
        return Err(GmiError::InvalidSpec("empty scalar functional".into()));
    }
    let n = a_scalar.len().div_ceil(t);
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|m| {
            (0..t)
                .map(|p| a_scalar.get(m * t + p).copied().unwrap_or(0.0))
                .collect()
        })
        .collect();
    FunctionalSpec::from_real(&rows)
}
