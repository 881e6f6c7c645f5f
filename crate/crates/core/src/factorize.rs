//! Canonical one-sided spectral factorization `W = Θ Θ*` with
//! `Θ(e^{-iλ}) = Σ_{k≥0} θ(k) e^{-iλk}`, and causal inverse factors.

use crate::error::{GmiError, Result};
use crate::increments::{chi_transfer, increment_polynomial, IncrementSpec};
use crate::linalg::{c64, frob, inverse, max_abs, min_eig, CMat, CZERO};
use crate::spectra::{
    increment_weighted, noisy_density, synthesize_causal, FourierTable, Role, SpectralDensityGrid,
};
use num_complex::Complex64;

/// Convergence threshold between successive Bauer rows.
pub const BAUER_TOL: f64 = 1e-9;
/// Relative eigenvalue floor for the full-rank branch.
pub const EIGEN_FLOOR: f64 = 1e-10;
const WILSON_MAX_ITER: usize = 60;

/// One-sided matrix coefficient sequence with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorizationResult {
    /// `θ(0..=K)` (or `ψ(0..=K)` for inverse factors).
    pub coeffs: Vec<CMat>,
    /// Sup norm over the grid of `ΘΘ* − target` (or `ΨΘ − I`).
    pub residual: f64,
    /// Coefficient-domain residual: covariance lags `0..=K` (or the
    /// convolution `ψ ∗ θ − δ I` inside the window).
    pub window_residual: f64,
    /// Uniqueness convention.
    pub normalization: String,
    /// Method used.
    pub method: String,
    /// Convergence flag of the iterative stage.
    pub converged: bool,
    /// Iterations spent.
    pub iterations: usize,
}

impl FactorizationResult {
    /// Matrix dimension.
    pub fn dim(&self) -> usize {
        self.coeffs[0].nrows()
    }

    /// Coefficient at `k`, zero outside `0..=K`.
    pub fn get(&self, k: i64) -> CMat {
        if k < 0 || k as usize >= self.coeffs.len() {
            CMat::zeros(self.dim(), self.dim())
        } else {
            self.coeffs[k as usize].clone()
        }
    }

    /// Zero factor of dimension `t` and length `k + 1` (for identically zero
    /// densities).
    pub fn zero(t: usize, k: usize) -> Self {
        FactorizationResult {
            coeffs: vec![CMat::zeros(t, t); k + 1],
            residual: 0.0,
            window_residual: 0.0,
            normalization: NORMALIZATION.into(),
            method: "zero".into(),
            converged: true,
            iterations: 0,
        }
    }

    /// Samples `Σ θ(k) e^{-iλk}` on the grid.
    pub fn on_grid(&self, grid: usize) -> Vec<CMat> {
        synthesize_causal(&self.coeffs, grid)
    }

    /// JSON export: `[{k, re: [...], im: [...]}]` with row-major entries.
    pub fn to_json(&self) -> serde_json::Value {
        let coeffs: Vec<serde_json::Value> = self
            .coeffs
            .iter()
            .enumerate()
            .map(|(k, m)| {
                let (mut re, mut im) = (Vec::new(), Vec::new());
                for i in 0..m.nrows() {
                    for j in 0..m.ncols() {
                        re.push(m[(i, j)].re);
                        im.push(m[(i, j)].im);
                    }
                }
                serde_json::json!({"k": k, "re": re, "im": im})
            })
            .collect();
        serde_json::json!({
            "dim": self.dim(),
            "coeffs": coeffs,
            "residual": self.residual,
            "window_residual": self.window_residual,
            "normalization": self.normalization,
            "method": self.method,
            "converged": self.converged,
            "iterations": self.iterations,
        })
    }
}

const NORMALIZATION: &str = "theta(0) lower-triangular with nonnegative real diagonal";

/// Sup norm of `ΘΘ* − W` over the grid.
pub fn reconstruction_residual(theta: &[CMat], target: &SpectralDensityGrid) -> f64 {
    let th = synthesize_causal(theta, target.grid_size());
    th.iter()
        .zip(&target.values)
        .map(|(t, w)| max_abs(&(t * t.adjoint() - w)))
        .fold(0.0, f64::max)
}

fn lag_residual(theta: &[CMat], table: &FourierTable) -> f64 {
    let k = theta.len();
    let mut worst = 0.0_f64;
    for j in 0..k {
        let mut r = CMat::zeros(theta[0].nrows(), theta[0].nrows());
        for l in 0..k - j {
            r += &theta[l + j] * theta[l].adjoint();
        }
        worst = worst.max(max_abs(&(r - table.coeff(-(j as i64)))));
    }
    worst
}

/// Canonical factorization of a full-rank Hermitian PSD density with
/// coefficients `0..=k`.
pub fn canonical_factorize(target: &SpectralDensityGrid, k: usize) -> Result<FactorizationResult> {
    target.check_psd(1e-8)?;
    let scale = target.sup_norm();
    if !(scale > 0.0) {
        return Err(GmiError::RankDeficient {
            lambda: target.lambda(0),
        });
    }
    for (m, v) in target.values.iter().enumerate() {
        if min_eig(v) <= EIGEN_FLOOR * scale {
            return Err(GmiError::RankDeficient {
                lambda: target.lambda(m),
            });
        }
    }
    if k + 1 > target.grid_size() / 2 {
        return Err(GmiError::Aliasing {
            grid: target.grid_size(),
            span: k as i64,
        });
    }
    let table = FourierTable::new(&target.values);
    let (coeffs, method, converged, iterations) = if target.dim() == 1 {
        (cepstral(target, k), "cepstral".to_string(), true, 1)
    } else {
        let (bauer, bconv, rows) = bauer(&table, target.dim(), k, scale)?;
        let (theta, wconv, it) = wilson(bauer, target);
        (theta, "bauer+wilson".to_string(), bconv || wconv, rows + it)
    };
    let residual = reconstruction_residual(&coeffs, target);
    let window_residual = lag_residual(&coeffs, &table);
    Ok(FactorizationResult {
        coeffs,
        residual,
        window_residual,
        normalization: NORMALIZATION.into(),
        method,
        converged,
        iterations,
    })
}

fn cepstral(target: &SpectralDensityGrid, k: usize) -> Vec<CMat> {
    let grid = target.grid_size();
    let logs: Vec<Complex64> = target
        .values
        .iter()
        .map(|v| c64(v[(0, 0)].re.ln(), 0.0))
        .collect();
    let table = FourierTable::from_scalar(&logs);
    // log Θ = c(0)/2 + Σ_{j≥1} γ_j e^{-iλj}, γ_j the coefficient of e^{-iλj} in log W
    let half = grid / 2;
    let mut cep: Vec<CMat> = Vec::with_capacity(half);
    cep.push(CMat::from_element(1, 1, table.coeff_scalar(0) * 0.5));
    for j in 1..half {
        cep.push(CMat::from_element(1, 1, table.coeff_scalar(-(j as i64))));
    }
    let log_theta = synthesize_causal(&cep, grid);
    let theta_grid: Vec<Complex64> = log_theta.iter().map(|v| v[(0, 0)].exp()).collect();
    let tt = FourierTable::from_scalar(&theta_grid);
    (0..=k)
        .map(|j| CMat::from_element(1, 1, tt.coeff_scalar(-(j as i64))))
        .collect()
}

/// Block-Toeplitz Cholesky (Bauer) returning the last block row as `θ`.
fn bauer(table: &FourierTable, t: usize, k: usize, scale: f64) -> Result<(Vec<CMat>, bool, usize)> {
    let max_blocks = (4 * k).max(8);
    let lag: Vec<CMat> = (0..max_blocks as i64).map(|j| table.coeff(-j)).collect();
    let gamma = |i: usize, j: usize| -> Complex64 {
        let (a, b) = (i / t, j / t);
        if a >= b {
            lag[a - b][(i % t, j % t)]
        } else {
            lag[b - a][(j % t, i % t)].conj()
        }
    };
    let mut rows: Vec<Vec<Complex64>> = Vec::new();
    let mut prev: Option<Vec<CMat>> = None;
    let tol = BAUER_TOL * scale.sqrt().max(1.0);
    for n in 0..max_blocks {
        for r in 0..t {
            let i = n * t + r;
            let mut row = vec![CZERO; i + 1];
            for j in 0..i {
                let lj = &rows[j];
                let s: Complex64 = (0..j).map(|q| row[q] * lj[q].conj()).sum();
                row[j] = (gamma(i, j) - s) / lj[j];
            }
            let d = gamma(i, i).re - row[..i].iter().map(|z| z.norm_sqr()).sum::<f64>();
            if !(d > 0.0) {
                return Err(GmiError::RankDeficient { lambda: f64::NAN });
            }
            row[i] = c64(d.sqrt(), 0.0);
            rows.push(row);
        }
        let depth = n.min(k);
        let theta: Vec<CMat> = (0..=k)
            .map(|j| {
                if j > depth {
                    CMat::zeros(t, t)
                } else {
                    CMat::from_fn(t, t, |a, b| {
                        rows[n * t + a]
                            .get((n - j) * t + b)
                            .copied()
                            .unwrap_or(CZERO)
                    })
                }
            })
            .collect();
        if let Some(p) = &prev {
            let diff = theta
                .iter()
                .zip(p)
                .map(|(x, y)| max_abs(&(x - y)))
                .fold(0.0, f64::max);
            if diff < tol && n > k.min(4) {
                return Ok((theta, true, n + 1));
            }
        }
        prev = Some(theta);
    }
    Ok((prev.unwrap(), false, max_blocks))
}

fn conv_causal(a: &[CMat], b: &[CMat], k: usize) -> Vec<CMat> {
    let t = a[0].nrows();
    (0..=k)
        .map(|n| {
            let mut s = CMat::zeros(t, t);
            for j in 0..=n {
                if j < a.len() && n - j < b.len() {
                    s += &a[j] * &b[n - j];
                }
            }
            s
        })
        .collect()
}

/// Wilson's quadratically convergent refinement started from `theta`.
fn wilson(mut theta: Vec<CMat>, target: &SpectralDensityGrid) -> (Vec<CMat>, bool, usize) {
    let grid = target.grid_size();
    let k = theta.len() - 1;
    let t = target.dim();
    let mut best = reconstruction_residual(&theta, target);
    let scale = target.sup_norm();
    for it in 0..WILSON_MAX_ITER {
        let th = synthesize_causal(&theta, grid);
        let mut x = Vec::with_capacity(grid);
        for (tm, w) in th.iter().zip(&target.values) {
            let Some(ti) = inverse(tm) else {
                return (theta, false, it);
            };
            x.push(&ti * w * ti.adjoint() + CMat::identity(t, t));
        }
        let table = FourierTable::new(&x);
        let mut plus: Vec<CMat> = (0..=k as i64).map(|j| table.coeff(-j)).collect();
        let x0 = plus[0].clone();
        plus[0] = CMat::from_fn(t, t, |a, b| {
            if a > b {
                x0[(a, b)]
            } else if a == b {
                x0[(a, a)] * 0.5
            } else {
                CZERO
            }
        });
        let next = conv_causal(&theta, &plus, k);
        let r = reconstruction_residual(&next, target);
        let step = next
            .iter()
            .zip(&theta)
            .map(|(a, b)| frob(&(a - b)))
            .fold(0.0, f64::max);
        if !(r < best * (1.0 + 1e-12)) {
            return (theta, best < 1e-10 * scale, it);
        }
        theta = next;
        best = r;
        if step < 1e-14 * scale.sqrt().max(1.0) || r < 1e-14 * scale {
            return (theta, true, it + 1);
        }
    }
    (theta, best < 1e-10 * scale, WILSON_MAX_ITER)
}

/// Causal inverse `ψ(0) = θ(0)^{-1}`, `ψ(n) = −θ(0)^{-1} Σ_{k=1}^{n} θ(k) ψ(n−k)`.
pub fn invert_factor(theta: &FactorizationResult, k: usize) -> Result<FactorizationResult> {
    let t = theta.dim();
    let t0i = inverse(&theta.coeffs[0]).ok_or(GmiError::Singular {
        context: "theta(0)".into(),
        lambda: f64::NAN,
    })?;
    let mut psi: Vec<CMat> = Vec::with_capacity(k + 1);
    psi.push(t0i.clone());
    for n in 1..=k {
        let mut s = CMat::zeros(t, t);
        for j in 1..=n.min(theta.coeffs.len() - 1) {
            s += &theta.coeffs[j] * &psi[n - j];
        }
        psi.push(-(&t0i * s));
    }
    // convolution check ψ ∗ θ = δ I inside the window
    let mut window_residual = 0.0_f64;
    for n in 0..=k {
        let mut s = CMat::zeros(t, t);
        for j in 0..=n.min(theta.coeffs.len() - 1) {
            s += &psi[n - j] * &theta.coeffs[j];
        }
        if n == 0 {
            s -= CMat::identity(t, t);
        }
        window_residual = window_residual.max(max_abs(&s));
    }
    let grid = (4 * (k + theta.coeffs.len())).next_power_of_two().max(256);
    let pg = synthesize_causal(&psi, grid);
    let tg = synthesize_causal(&theta.coeffs, grid);
    let residual = pg
        .iter()
        .zip(&tg)
        .map(|(p, q)| max_abs(&(p * q - CMat::identity(t, t))))
        .fold(0.0, f64::max);
    Ok(FactorizationResult {
        coeffs: psi,
        residual,
        window_residual,
        normalization: "causal inverse of theta".into(),
        method: "recursion".into(),
        converged: true,
        iterations: k,
    })
}

/// Factorization of the observed increment density `|χ/β|² (f + |β|² g)`.
/// Zeros of `χ` on the grid are designed in: the target is divided by `|χ|²`,
/// factored, and multiplied back by the increment polynomial.
pub fn factorize_increment_weighted(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    k: usize,
) -> Result<FactorizationResult> {
    let p = noisy_density(f, g, spec)?;
    let w = increment_weighted(&p, spec);
    factorize_with_designed_zeros(&w, spec, k)
}

/// Factors `w`, extracting the increment polynomial when `w` vanishes at zeros
/// of `χ`.
pub fn factorize_with_designed_zeros(
    w: &SpectralDensityGrid,
    spec: &IncrementSpec,
    k: usize,
) -> Result<FactorizationResult> {
    let scale = w.sup_norm();
    if !(scale > 0.0) {
        return Err(GmiError::RankDeficient {
            lambda: w.lambda(0),
        });
    }
    let grid = w.grid_size();
    let low: Vec<usize> = (0..grid)
        .filter(|&m| min_eig(&w.values[m]) <= EIGEN_FLOOR * scale)
        .collect();
    if low.is_empty() {
        return canonical_factorize(w, k);
    }
    if !spec.is_integer() {
        return Err(GmiError::RankDeficient {
            lambda: w.lambda(low[0]),
        });
    }
    for &m in &low {
        if chi_transfer(spec, w.lambda(m)).norm() > 1e-6 {
            return Err(GmiError::RankDeficient {
                lambda: w.lambda(m),
            });
        }
    }
    let chi2: Vec<f64> = (0..grid)
        .map(|m| chi_transfer(spec, w.lambda(m)).norm_sqr())
        .collect();
    let mut q: Vec<CMat> = Vec::with_capacity(grid);
    let mut bad = vec![false; grid];
    for m in 0..grid {
        if chi2[m] < 1e-24 {
            bad[m] = true;
            q.push(CMat::zeros(w.dim(), w.dim()));
        } else {
            q.push(w.values[m].scale(1.0 / chi2[m]));
        }
    }
    for m in 0..grid {
        if bad[m] {
            let (l, r) = ((m + grid - 1) % grid, (m + 1) % grid);
            q[m] = (&q[l] + &q[r]).scale(0.5);
        }
    }
    let qg = SpectralDensityGrid::new(q, Role::Other)?;
    let e = increment_polynomial(spec)?;
    let kq = k.saturating_sub(e.degree()).max(1);
    let fq = canonical_factorize(&qg, kq)?;
    let t = w.dim();
    let ecoef: Vec<CMat> = e
        .coeffs
        .iter()
        .map(|&c| CMat::identity(t, t).scale(c))
        .collect();
    let coeffs = conv_causal(&ecoef, &fq.coeffs, kq + e.degree());
    let residual = reconstruction_residual(&coeffs, w);
    let table = FourierTable::new(&w.values);
    let window_residual = lag_residual(&coeffs, &table);
    Ok(FactorizationResult {
        coeffs,
        residual,
        window_residual,
        normalization: NORMALIZATION.into(),
        method: format!("designed zeros ({}) x {}", e.degree(), fq.method),
        converged: fq.converged,
        iterations: fq.iterations,
    })
}

/// Factor of a possibly zero density; identically zero densities give the zero
/// factor.
pub fn factorize_or_zero(target: &SpectralDensityGrid, k: usize) -> Result<FactorizationResult> {
    if target.sup_norm() == 0.0 {
        return Ok(FactorizationResult::zero(target.dim(), k));
    }
    canonical_factorize(target, k)
}

/// Roots of the scalar polynomial `Σ c_k z^k` via the companion matrix.
pub fn polynomial_roots(coeffs: &[Complex64]) -> Vec<Complex64> {
    let mut c = coeffs.to_vec();
    while c.len() > 1 && c.last().map(|z| z.norm() < 1e-14).unwrap_or(false) {
        c.pop();
    }
    let n = c.len() - 1;
    if n == 0 {
        return vec![];
    }
    let lead = c[n];
    let mut comp = CMat::zeros(n, n);
    for i in 1..n {
        comp[(i, i - 1)] = c64(1.0, 0.0);
    }
    for i in 0..n {
        comp[(i, n - 1)] = -c[i] / lead;
    }
    comp.schur()
        .eigenvalues()
        .map(|v| v.iter().copied().collect())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CONE;
    use crate::spectra::{eval_density, DensityModel};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn scalar(v: f64) -> CMat {
        CMat::from_element(1, 1, c64(v, 0.0))
    }

    #[test]
    fn ma1_factor() {
        let w = eval_density(&DensityModel::scalar_ma(&[1.0, 0.5]), 1024).unwrap();
        let r = canonical_factorize(&w, 16).unwrap();
        assert!((r.coeffs[0][(0, 0)] - CONE).norm() < 1e-12);
        assert!((r.coeffs[1][(0, 0)] - c64(0.5, 0.0)).norm() < 1e-12);
        assert!(r.coeffs[2..].iter().all(|c| c[(0, 0)].norm() < 1e-12));
        assert!(r.residual < 1e-8);
    }

    #[test]
    fn identity_factor() {
        let w = SpectralDensityGrid::constant(&CMat::identity(2, 2), 256, Role::Other).unwrap();
        let r = canonical_factorize(&w, 8).unwrap();
        assert!(max_abs(&(&r.coeffs[0] - CMat::identity(2, 2))) < 1e-10);
        assert!(r.coeffs[1..].iter().all(|c| max_abs(c) < 1e-10));
    }

    fn random_theta(rng: &mut ChaCha8Rng, t: usize, deg: usize) -> Vec<CMat> {
        let mut th: Vec<CMat> = (0..=deg)
            .map(|_| {
                CMat::from_fn(t, t, |_, _| {
                    c64(rng.random_range(-0.08..0.08), rng.random_range(-0.08..0.08))
                })
            })
            .collect();
        th[0] = CMat::from_fn(t, t, |a, b| {
            if a == b {
                c64(1.0 + rng.random_range(0.0..0.5), 0.0)
            } else if a > b {
                c64(rng.random_range(-0.1..0.1), rng.random_range(-0.1..0.1))
            } else {
                CZERO
            }
        });
        th
    }

    #[test]
    fn construct_then_factor_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            // Σ_{k≥1} ‖θ(k)‖ < σ_min(θ(0)) keeps Θ invertible on the closed disk
            let th = random_theta(&mut rng, 2, 3);
            let grid = 512;
            let vals: Vec<CMat> = synthesize_causal(&th, grid)
                .iter()
                .map(|t| t * t.adjoint())
                .collect();
            let w = SpectralDensityGrid::new(vals, Role::Other).unwrap();
            let r = canonical_factorize(&w, 16).unwrap();
            assert!(r.residual < 1e-6 * w.sup_norm(), "residual {}", r.residual);
            for j in 0..=3 {
                assert!(max_abs(&(&r.coeffs[j] - &th[j])) < 1e-6, "coefficient {j}");
            }
            assert!(r.coeffs[4..].iter().all(|c| max_abs(c) < 1e-6));
        }
    }

    #[test]
    fn invert_examples() {
        let th = FactorizationResult {
            coeffs: vec![scalar(1.0), scalar(0.5)],
            ..FactorizationResult::zero(1, 1)
        };
        let psi = invert_factor(&th, 6).unwrap();
        let expect = [1.0, -0.5, 0.25, -0.125, 0.0625, -0.03125, 0.015625];
        for (p, e) in psi.coeffs.iter().zip(expect) {
            assert!((p[(0, 0)].re - e).abs() < 1e-15);
        }
        let id = FactorizationResult {
            coeffs: vec![CMat::identity(2, 2)],
            ..FactorizationResult::zero(2, 0)
        };
        let psi = invert_factor(&id, 4).unwrap();
        assert!(max_abs(&(&psi.coeffs[0] - CMat::identity(2, 2))) == 0.0);
        assert!(psi.coeffs[1..].iter().all(|c| max_abs(c) == 0.0));
    }

    #[test]
    fn invert_random_degree_four() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let th = random_theta(&mut rng, 2, 4);
        let fr = FactorizationResult {
            coeffs: th,
            ..FactorizationResult::zero(2, 4)
        };
        let psi = invert_factor(&fr, 64).unwrap();
        assert!(psi.window_residual < 1e-9);
    }

    #[test]
    fn increment_weighted_examples() {
        let spec0 = IncrementSpec::single(1, 1, 0, 1).unwrap();
        let f = eval_density(&DensityModel::scalar_ma(&[1.0, 0.3]), 512).unwrap();
        let g = eval_density(&DensityModel::scalar_constant(0.5), 512).unwrap();
        let a = factorize_increment_weighted(&f, &g, &spec0, 32).unwrap();
        let sum = SpectralDensityGrid::new(
            f.values.iter().zip(&g.values).map(|(x, y)| x + y).collect(),
            Role::P,
        )
        .unwrap();
        let b = canonical_factorize(&sum, 32).unwrap();
        for (x, y) in a.coeffs.iter().zip(&b.coeffs) {
            assert!(max_abs(&(x - y)) < 1e-12);
        }
        let spec = IncrementSpec::single(1, 1, 1, 1).unwrap();
        let zero = SpectralDensityGrid::zeros(512, 1, Role::F).unwrap();
        let one = SpectralDensityGrid::constant(&scalar(1.0), 512, Role::G).unwrap();
        let r = factorize_increment_weighted(&zero, &one, &spec, 8).unwrap();
        assert!((r.coeffs[0][(0, 0)].re - 1.0).abs() < 1e-8);
        assert!((r.coeffs[1][(0, 0)].re + 1.0).abs() < 1e-8);
        assert!(r.coeffs[2..].iter().all(|c| c[(0, 0)].norm() < 1e-8));
        assert!(r.residual < 1e-8);
    }

    #[test]
    fn minimum_phase_scalar() {
        let w = eval_density(
            &DensityModel::scalar_arma(1.3, &[1.0, -0.6, 0.2], &[1.0, -0.5]),
            2048,
        )
        .unwrap();
        let r = canonical_factorize(&w, 40).unwrap();
        let c: Vec<Complex64> = r.coeffs.iter().map(|m| m[(0, 0)]).collect();
        let roots = polynomial_roots(&c[..12]);
        // truncated AR part adds spurious roots near the |z| = 1/0.5^{1/11} ring; all stay outside
        assert!(roots.iter().all(|z| z.norm() >= 1.0 - 1e-6));
        assert!(r.residual < 1e-8);
    }

    #[test]
    fn rank_deficient_rejected() {
        let w = eval_density(&DensityModel::scalar_ma(&[1.0, -1.0]), 256).unwrap();
        assert!(matches!(
            canonical_factorize(&w, 8),
            Err(GmiError::RankDeficient { .. })
        ));
        let z = SpectralDensityGrid::zeros(256, 1, Role::G).unwrap();
        assert!(factorize_or_zero(&z, 4)
            .unwrap()
            .coeffs
            .iter()
            .all(|c| max_abs(c) == 0.0));
    }
}
