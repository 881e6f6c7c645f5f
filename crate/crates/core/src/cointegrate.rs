//! Forecasting `Aξ` from observations of a sequence `ζ` seasonally
//! cointegrated with `ξ`: `ζ − αξ` stationary and uncorrelated with `ξ`.

use serde::{Deserialize, Serialize};

use crate::error::{GmiError, Result};
use crate::forecast::{
    factorized_forecast, spectral_characteristic, ForecastSolution, FunctionalSpec,
};
use crate::increments::IncrementSpec;
use crate::linalg::min_eig;
use crate::operators::{BlockOperator, PtqTables};
use crate::spectra::{
    beta_abs2_on_grid, increment_weighted, kernel_abs2_on_grid, Role, SpectralDensityGrid,
};

/// Tolerance of the remainder PSD check, relative to `sup ‖p‖`.
pub const REMAINDER_PSD_TOL: f64 = 1e-8;

/// Cointegration data: `α`, the density `f` of `ξ` and `p` of `ζ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CointegrationSpec {
    /// Cointegrating constant.
    pub alpha: f64,
    /// Density of `ξ^{(d)}`.
    pub f: SpectralDensityGrid,
    /// Density of `ζ^{(d)}`.
    pub p: SpectralDensityGrid,
}

impl CointegrationSpec {
    /// Validates `α ≠ 0`, matching grids and PSD `p − α² f`.
    pub fn new(alpha: f64, f: SpectralDensityGrid, p: SpectralDensityGrid) -> Result<Self> {
        if alpha == 0.0 || !alpha.is_finite() {
            return Err(GmiError::InvalidSpec(
                "cointegrating constant must be finite and nonzero".into(),
            ));
        }
        if f.grid_size() != p.grid_size() || f.dim() != p.dim() {
            return Err(GmiError::GridMismatch(
                "f and p differ in grid or dimension".into(),
            ));
        }
        let scale = p.sup_norm().max(1e-300);
        for m in 0..p.grid_size() {
            let r = &p.values[m] - f.values[m].scale(alpha * alpha);
            let lo = min_eig(&r);
            if lo < -REMAINDER_PSD_TOL * scale {
                return Err(GmiError::NotPsd(format!(
                    "p - alpha^2 f has eigenvalue {lo:e} at lambda = {}",
                    p.lambda(m)
                )));
            }
        }
        Ok(CointegrationSpec { alpha, f, p })
    }

    /// Remainder density `g = |β|^{-2}(p − α² f)`; grid points where `β`
    /// vanishes take the average of their neighbours.
    pub fn remainder_density(&self, spec: &IncrementSpec) -> Result<SpectralDensityGrid> {
        let grid = self.p.grid_size();
        let b2 = beta_abs2_on_grid(spec, grid);
        let a2 = self.alpha * self.alpha;
        let mut vals = Vec::with_capacity(grid);
        let mut zero = vec![false; grid];
        for m in 0..grid {
            if b2[m] == 0.0 {
                zero[m] = true;
                vals.push(self.p.values[m].scale(0.0));
            } else {
                vals.push((&self.p.values[m] - self.f.values[m].scale(a2)).scale(1.0 / b2[m]));
            }
        }
        for m in 0..grid {
            if zero[m] {
                let (l, r) = ((m + grid - 1) % grid, (m + 1) % grid);
                vals[m] = (&vals[l] + &vals[r]).scale(0.5);
            }
        }
        SpectralDensityGrid::new(vals, Role::G)
    }
}

/// `P^α`, `T^α`, `Q^α` with `(N+1) × (N+1)` blocks.
pub fn coint_operators(
    cs: &CointegrationSpec,
    spec: &IncrementSpec,
    n: usize,
) -> Result<(BlockOperator, BlockOperator, BlockOperator)> {
    let grid = cs.p.grid_size();
    if grid < 8 * (n + 1) {
        return Err(GmiError::Aliasing {
            grid,
            span: n as i64 + 1,
        });
    }
    let g = cs.remainder_density(spec)?;
    let w = increment_weighted(&cs.p, spec);
    let k2 = kernel_abs2_on_grid(spec, grid);
    let tables = PtqTables::from_parts(&cs.f, &g, &w, &k2)?;
    Ok((
        tables.p_op(n + 1, n + 1, n),
        tables.t_op(n + 1, n + 1, n),
        tables.q_op(n + 1, n + 1, n),
    ))
}

/// Optimal estimate of `Aξ` from `ζ(k)`, `k ≤ −1` (operator path). The
/// problem is solved for `αξ` with target density `α² f` and noise
/// `|β|^{-2}(p − α² f)`, then rescaled by `1/α`.
pub fn coint_forecast(
    cs: &CointegrationSpec,
    spec: &IncrementSpec,
    fnl: &FunctionalSpec,
    n_trunc: usize,
) -> Result<ForecastSolution> {
    let g = cs.remainder_density(spec)?;
    let fa = cs.f.scaled(cs.alpha * cs.alpha);
    let sol = spectral_characteristic(&fa, &g, spec, fnl, n_trunc)?;
    Ok(sol.scaled(1.0 / cs.alpha))
}

/// Factorized-path counterpart of [`coint_forecast`] with factor length `k`.
pub fn coint_factorized_forecast(
    cs: &CointegrationSpec,
    spec: &IncrementSpec,
    fnl: &FunctionalSpec,
    k: usize,
) -> Result<ForecastSolution> {
    let g = cs.remainder_density(spec)?;
    let fa = cs.f.scaled(cs.alpha * cs.alpha);
    let sol = factorized_forecast(&fa, &g, spec, fnl, k)?;
    Ok(sol.scaled(1.0 / cs.alpha))
}

/// Advisory stationarity report for `ζ − αξ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CointegrationReport {
    /// Log-log slope of prefix sample variance against prefix length (max
    /// over components); near 0 for stationary, near 1 for random walks.
    pub variance_slope: f64,
    /// Fraction of periodogram mass in the lowest 5% of Fourier frequencies
    /// (max over components).
    pub low_frequency_mass: f64,
    /// Heuristic verdict.
    pub stationary: bool,
}

/// Variance-slope threshold of the verdict.
pub const SLOPE_THRESHOLD: f64 = 0.5;
/// Low-frequency mass threshold of the verdict.
pub const LOW_MASS_THRESHOLD: f64 = 0.25;

fn variance(x: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n
}

/// Heuristic check that `ζ − αξ` is stationary (no formal unit-root test).
pub fn check_cointegration(
    zeta: &[Vec<f64>],
    xi: &[Vec<f64>],
    alpha: f64,
) -> Result<CointegrationReport> {
    if alpha == 0.0 {
        return Err(GmiError::InvalidSpec(
            "cointegrating constant must be nonzero".into(),
        ));
    }
    if zeta.len() != xi.len() {
        return Err(GmiError::InvalidSpec("series lengths differ".into()));
    }
    let n = zeta.len();
    if n < 64 {
        return Err(GmiError::InsufficientData(format!(
            "need at least 64 points, got {n}"
        )));
    }
    let t = zeta[0].len();
    let mut slope = f64::NEG_INFINITY;
    let mut low = 0.0_f64;
    for c in 0..t {
        let r: Vec<f64> = zeta
            .iter()
            .zip(xi)
            .map(|(z, x)| z[c] - alpha * x[c])
            .collect();
        let lens: Vec<usize> = (0..5).map(|j| n >> (4 - j)).filter(|&l| l >= 8).collect();
        let pts: Vec<(f64, f64)> = lens
            .iter()
            .map(|&l| ((l as f64).ln(), variance(&r[..l]).max(1e-300).ln()))
            .collect();
        let k = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
        let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
        let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
        slope = slope.max(sxy / sxx);
        let per = crate::simulate::periodogram(&r);
        let half = &per[1..per.len() / 2];
        let total: f64 = half.iter().sum();
        let cut = (half.len() / 20).max(1);
        let lowsum: f64 = half[..cut].iter().sum();
        low = low.max(if total > 0.0 { lowsum / total } else { 0.0 });
    }
    Ok(CointegrationReport {
        variance_slope: slope,
        low_frequency_mass: low,
        stationary: slope < SLOPE_THRESHOLD && low < LOW_MASS_THRESHOLD,
    })
}
