//! Truncated block operators `P_μ`, `T_μ`, `Q`, `Z_μ`, `D^μ` and the coefficient
//! solve `c_μ = P^{-1}(D^μ a − T a_μ)`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{GmiError, Result};
use crate::factorize::FactorizationResult;
use crate::increments::{dmu_coefficients, increment_polynomial, IncrementSpec, PolyCoeffs};
use crate::linalg::{conj, inner, inverse, matvec, min_eig, solve_refined, CMat, CZERO};
use crate::spectra::{
    increment_weighted, kernel_abs2_on_grid, noisy_density, FourierTable, SpectralDensityGrid,
};

/// Condition-estimate cap for the coefficient solve.
pub const CONDITION_CAP: f64 = 1e12;

/// Role of a block operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum OpRole {
    /// `P_μ`.
    P,
    /// `P_μ^{-1}` assembled from factors.
    PInv,
    /// `T_μ`.
    T,
    /// `Q`.
    Q,
    /// `Z_μ`.
    Z,
    /// `D^μ`.
    D,
}

/// Block matrix with `rows × cols` blocks of size `dim × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOperator {
    /// Dense storage, `(rows·dim) × (cols·dim)`.
    pub mat: CMat,
    /// Number of block rows.
    pub rows: usize,
    /// Number of block columns.
    pub cols: usize,
    /// Block size T.
    pub dim: usize,
    /// Truncation parameter N.
    pub trunc: usize,
    /// Role tag.
    pub role: OpRole,
}

impl BlockOperator {
    /// Builds from a block generator.
    pub fn from_fn(
        rows: usize,
        cols: usize,
        dim: usize,
        trunc: usize,
        role: OpRole,
        mut f: impl FnMut(usize, usize) -> CMat,
    ) -> Self {
        let mut mat = CMat::zeros(rows * dim, cols * dim);
        for k in 0..rows {
            for j in 0..cols {
                let b = f(k, j);
                mat.view_mut((k * dim, j * dim), (dim, dim)).copy_from(&b);
            }
        }
        BlockOperator {
            mat,
            rows,
            cols,
            dim,
            trunc,
            role,
        }
    }

    /// Block `(k, j)`.
    pub fn block(&self, k: usize, j: usize) -> CMat {
        self.mat
            .view((k * self.dim, j * self.dim), (self.dim, self.dim))
            .into_owned()
    }

    /// Applies to a block vector (missing blocks are zero).
    pub fn apply(&self, x: &WeightVector) -> WeightVector {
        let mut flat = vec![CZERO; self.cols * self.dim];
        for j in 0..self.cols {
            let v = x.get(j as i64);
            flat[j * self.dim..(j + 1) * self.dim].copy_from_slice(&v);
        }
        let y = matvec(&self.mat, &flat);
        WeightVector::from_flat(0, self.dim, &y)
    }

    /// Largest deviation from block Hermitian symmetry `P_{j,k} = P_{k,j}*`.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.rows.min(self.cols);
        let mut worst = 0.0_f64;
        for k in 0..n {
            for j in 0..n {
                let d = self.block(j, k) - self.block(k, j).adjoint();
                worst = worst.max(crate::linalg::max_abs(&d));
            }
        }
        worst
    }
}

/// Sequence of T-vectors indexed from `start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    /// Index of the first entry.
    pub start: i64,
    /// Vector dimension T.
    pub dim: usize,
    /// Entries.
    pub entries: Vec<Vec<Complex64>>,
}

impl WeightVector {
    /// Empty vector of dimension `dim` starting at `start`.
    pub fn empty(start: i64, dim: usize) -> Self {
        WeightVector {
            start,
            dim,
            entries: vec![],
        }
    }

    /// Zero vector with `len` entries.
    pub fn zeros(start: i64, dim: usize, len: usize) -> Self {
        WeightVector {
            start,
            dim,
            entries: vec![vec![CZERO; dim]; len],
        }
    }

    /// From real entries.
    pub fn from_real(start: i64, entries: &[Vec<f64>]) -> Self {
        let dim = entries.first().map(|e| e.len()).unwrap_or(1);
        WeightVector {
            start,
            dim,
            entries: entries
                .iter()
                .map(|e| e.iter().map(|&x| Complex64::new(x, 0.0)).collect())
                .collect(),
        }
    }

    /// Splits a flat vector into blocks of `dim`.
    pub fn from_flat(start: i64, dim: usize, flat: &[Complex64]) -> Self {
        WeightVector {
            start,
            dim,
            entries: flat.chunks(dim).map(|c| c.to_vec()).collect(),
        }
    }

    /// Number of entries.
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    /// True when there are no entries.
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Last index (`start − 1` when empty).
    pub fn end(&self) -> i64 {
        self.start + self.entries.len() as i64 - 1
    }

    /// Entry at index `k`, zero outside the range.
    pub fn get(&self, k: i64) -> Vec<Complex64> {
        let i = k - self.start;
        if i < 0 || i as usize >= self.entries.len() {
            vec![CZERO; self.dim]
        } else {
            self.entries[i as usize].clone()
        }
    }

    /// Concatenated entries for indices `lo..=hi`.
    pub fn flat_range(&self, lo: i64, hi: i64) -> Vec<Complex64> {
        (lo..=hi).flat_map(|k| self.get(k)).collect()
    }

    /// `Σ_k x(k)ᵀ conj(y(k))` over the union of supports.
    pub fn inner(&self, other: &WeightVector) -> Complex64 {
        let lo = self.start.min(other.start);
        let hi = self.end().max(other.end());
        (lo..=hi).map(|k| inner(&self.get(k), &other.get(k))).sum()
    }

    /// Squared l2 norm.
    pub fn norm_sqr(&self) -> f64 {
        self.entries.iter().flatten().map(|z| z.norm_sqr()).sum()
    }

    /// Largest entry modulus.
    pub fn max_abs(&self) -> f64 {
        self.entries
            .iter()
            .flatten()
            .fold(0.0, |m, z| m.max(z.norm()))
    }

    /// Multiplies all entries by a scalar.
    pub fn scaled(&self, s: Complex64) -> Self {
        WeightVector {
            start: self.start,
            dim: self.dim,
            entries: self
                .entries
                .iter()
                .map(|e| e.iter().map(|z| z * s).collect())
                .collect(),
        }
    }

    /// Samples `Σ_k x(k) e^{iλk}` (as a `dim × 1` matrix) on the grid.
    pub fn synthesize(&self, grid: usize) -> Vec<CMat> {
        if self.entries.is_empty() {
            return vec![CMat::zeros(self.dim, 1); grid];
        }
        let mats: Vec<CMat> = self
            .entries
            .iter()
            .map(|e| CMat::from_column_slice(self.dim, 1, e))
            .collect();
        crate::spectra::synthesize(self.start, &mats, grid)
    }
}

/// Lagged Fourier tables of the three weight functions of `P`, `T` and `Q`.
#[derive(Debug, Clone)]
pub struct PtqTables {
    /// `[W^{-1}]ᵀ` with `W = |χ/β|² p`.
    pub p: FourierTable,
    /// `[g W^{-1}]ᵀ`.
    pub t: FourierTable,
    /// `[|χ/β|² f W^{-1} g]ᵀ`.
    pub q: FourierTable,
    /// Block size.
    pub dim: usize,
    /// Grid size.
    pub grid: usize,
}

impl PtqTables {
    /// Samples and transforms the weight functions.
    ///
    /// `|β|²/|χ|² p^{-1}` is evaluated as `W^{-1}`, `|β|²/|χ|² g p^{-1}` as
    /// `g W^{-1}` and `f p^{-1} g` as `|χ/β|² f W^{-1} g`, which avoids the
    /// removable 0/0 of the kernel ratio.
    pub fn new(
        f: &SpectralDensityGrid,
        g: &SpectralDensityGrid,
        spec: &IncrementSpec,
    ) -> Result<Self> {
        let p = noisy_density(f, g, spec)?;
        let w = increment_weighted(&p, spec);
        let k2 = kernel_abs2_on_grid(spec, f.grid_size());
        Self::from_parts(f, g, &w, &k2)
    }

    /// Builds from `f`, `g`, the weighted observed density `w` and `|χ/β|²`.
    pub fn from_parts(
        f: &SpectralDensityGrid,
        g: &SpectralDensityGrid,
        w: &SpectralDensityGrid,
        k2: &[f64],
    ) -> Result<Self> {
        let grid = w.grid_size();
        let scale = w.sup_norm();
        let mut pw = Vec::with_capacity(grid);
        let mut tw = Vec::with_capacity(grid);
        let mut qw = Vec::with_capacity(grid);
        for m in 0..grid {
            let wm = &w.values[m];
            if !(min_eig(wm) > 1e-13 * scale) {
                return Err(GmiError::Singular {
                    context: "observed increment density".into(),
                    lambda: w.lambda(m),
                });
            }
            let wi = inverse(wm).ok_or(GmiError::Singular {
                context: "observed increment density".into(),
                lambda: w.lambda(m),
            })?;
            let gw = &g.values[m] * &wi;
            qw.push((f.values[m].scale(k2[m]) * &wi * &g.values[m]).transpose());
            tw.push(gw.transpose());
            pw.push(wi.transpose());
        }
        Ok(PtqTables {
            p: FourierTable::new(&pw),
            t: FourierTable::new(&tw),
            q: FourierTable::new(&qw),
            dim: w.dim(),
            grid,
        })
    }

    fn toeplitz(
        table: &FourierTable,
        rows: usize,
        cols: usize,
        dim: usize,
        trunc: usize,
        role: OpRole,
    ) -> BlockOperator {
        let lags: Vec<CMat> = (-(cols as i64) + 1..rows as i64)
            .map(|l| table.coeff(l))
            .collect();
        let off = cols as i64 - 1;
        BlockOperator::from_fn(rows, cols, dim, trunc, role, |k, j| {
            lags[(k as i64 - j as i64 + off) as usize].clone()
        })
    }

    /// `P` with `rows × cols` blocks.
    pub fn p_op(&self, rows: usize, cols: usize, trunc: usize) -> BlockOperator {
        Self::toeplitz(&self.p, rows, cols, self.dim, trunc, OpRole::P)
    }

    /// `T` with `rows × cols` blocks.
    pub fn t_op(&self, rows: usize, cols: usize, trunc: usize) -> BlockOperator {
        Self::toeplitz(&self.t, rows, cols, self.dim, trunc, OpRole::T)
    }

    /// `Q` with `rows × cols` blocks.
    pub fn q_op(&self, rows: usize, cols: usize, trunc: usize) -> BlockOperator {
        Self::toeplitz(&self.q, rows, cols, self.dim, trunc, OpRole::Q)
    }
}

fn aliasing_check(grid: usize, span: usize) -> Result<()> {
    if grid < 8 * span {
        return Err(GmiError::Aliasing {
            grid,
            span: span as i64,
        });
    }
    Ok(())
}

/// `(N+1) × (N+1)` block operators `P`, `T` and `Q`.
pub fn build_ptq(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    n: usize,
) -> Result<(BlockOperator, BlockOperator, BlockOperator)> {
    aliasing_check(f.grid_size(), n + 1)?;
    let tables = PtqTables::new(f, g, spec)?;
    Ok((
        tables.p_op(n + 1, n + 1, n),
        tables.t_op(n + 1, n + 1, n),
        tables.q_op(n + 1, n + 1, n),
    ))
}

/// `a_μ(m) = Σ_{l=max(m−n(γ),0)}^{min(m,N)} e(m−l) a(l)`, `m = 0..=N+n(γ)`.
pub fn a_mu_weights(a: &WeightVector, e: &PolyCoeffs) -> WeightVector {
    let n_a = a.len() as i64 - 1;
    let deg = e.degree() as i64;
    let mut out = WeightVector::zeros(0, a.dim, (n_a + deg + 1).max(0) as usize);
    for m in 0..=n_a + deg {
        let mut acc = vec![CZERO; a.dim];
        for l in (m - deg).max(0)..=m.min(n_a) {
            let c = e.get(m - l);
            if c == 0.0 {
                continue;
            }
            for (x, y) in acc.iter_mut().zip(a.get(l)) {
                *x += y * c;
            }
        }
        out.entries[m as usize] = acc;
    }
    out
}

/// `b(k) = Σ_{m≥k} d_μ(m−k) a(m)` for `k = 0..=N` and
/// `v(k) = Σ_{l=0}^{min(N, k+n(γ))} e(l−k) b(l)` for `k = −n(γ)..=−1`.
pub fn b_and_v_weights(
    a: &WeightVector,
    spec: &IncrementSpec,
) -> Result<(WeightVector, WeightVector)> {
    let n_a = a.len();
    let e = increment_polynomial(spec)?;
    let d = dmu_coefficients(spec, n_a.max(1))?;
    let mut b = WeightVector::zeros(0, a.dim, n_a);
    for k in 0..n_a {
        let mut acc = vec![CZERO; a.dim];
        for m in k..n_a {
            let c = d.coeffs[m - k];
            if c == 0.0 {
                continue;
            }
            for (x, y) in acc.iter_mut().zip(&a.entries[m]) {
                *x += y * c;
            }
        }
        b.entries[k] = acc;
    }
    let deg = e.degree() as i64;
    let n_max = n_a as i64 - 1;
    let mut v = WeightVector::zeros(-deg, a.dim, deg as usize);
    for k in -deg..=-1 {
        let mut acc = vec![CZERO; a.dim];
        for l in 0..=n_max.min(k + deg) {
            let c = e.get(l - k);
            for (x, y) in acc.iter_mut().zip(b.get(l)) {
                *x += y * c;
            }
        }
        v.entries[(k + deg) as usize] = acc;
    }
    Ok((b, v))
}

/// `D^μ` truncated to `(N+1) × (N+1)` blocks: `(D)_{k,m} = d_μ(m−k) I` for `m ≥ k`.
pub fn build_d(spec: &IncrementSpec, n: usize) -> Result<BlockOperator> {
    let d = dmu_coefficients(spec, n)?;
    let t = spec.period;
    Ok(BlockOperator::from_fn(
        n + 1,
        n + 1,
        t,
        n,
        OpRole::D,
        |k, m| {
            if m >= k {
                CMat::identity(t, t).scale(d.coeffs[m - k])
            } else {
                CMat::zeros(t, t)
            }
        },
    ))
}

/// Solution of the truncated coefficient system.
#[derive(Debug, Clone, PartialEq)]
pub struct CSolve {
    /// `c_μ(0..=N)`.
    pub c: WeightVector,
    /// Right-hand side `D^μ a − T a_μ` (rows `0..=N`).
    pub r: WeightVector,
    /// Pivot-ratio condition estimate.
    pub cond_estimate: f64,
    /// Relative residual of the solve.
    pub residual: f64,
}

/// `c_μ = P^{-1}(b − T a_μ)` as one dense block solve.
pub fn solve_c(
    p: &BlockOperator,
    b: &WeightVector,
    t_op: &BlockOperator,
    a_mu: &WeightVector,
) -> Result<CSolve> {
    let rows = p.rows;
    if b.end() >= rows as i64 {
        return Err(GmiError::InvalidSpec(format!(
            "truncation {} shorter than the functional support {}",
            rows - 1,
            b.end()
        )));
    }
    if a_mu.end() >= t_op.cols as i64 {
        return Err(GmiError::InvalidSpec(
            "T operator narrower than a_mu".into(),
        ));
    }
    let ta = t_op.apply(a_mu);
    let mut r = WeightVector::zeros(0, p.dim, rows);
    for k in 0..rows {
        let bk = b.get(k as i64);
        let tk = ta.get(k as i64);
        r.entries[k] = bk.iter().zip(&tk).map(|(x, y)| x - y).collect();
    }
    let flat = r.flat_range(0, rows as i64 - 1);
    let sol = solve_refined(&p.mat, &flat)?;
    if sol.cond_estimate > CONDITION_CAP {
        return Err(GmiError::IllConditioned {
            cond: sol.cond_estimate,
        });
    }
    Ok(CSolve {
        c: WeightVector::from_flat(0, p.dim, &sol.x),
        r,
        cond_estimate: sol.cond_estimate,
        residual: sol.residual,
    })
}

/// `P = Ψᵀ Ψ̄` and `P^{-1} = Θ̄ Θᵀ` from the factor of `W = |χ/β|² p` and its
/// inverse, each truncated to `(N+1) × (N+1)` blocks.
pub fn factorized_p_inverse(
    theta: &FactorizationResult,
    psi: &FactorizationResult,
    n: usize,
) -> (BlockOperator, BlockOperator) {
    let t = theta.dim();
    let kmax = psi.coeffs.len() as i64 - 1;
    let p = BlockOperator::from_fn(n + 1, n + 1, t, n, OpRole::P, |i, j| {
        let mut s = CMat::zeros(t, t);
        let lo = i.max(j) as i64;
        for l in lo..=(kmax + i.min(j) as i64) {
            let a = psi.get(l - i as i64);
            let b = psi.get(l - j as i64);
            s += a.transpose() * conj(&b);
        }
        s
    });
    let pinv = BlockOperator::from_fn(n + 1, n + 1, t, n, OpRole::PInv, |i, j| {
        let mut s = CMat::zeros(t, t);
        for l in 0..=i.min(j) as i64 {
            s += conj(&theta.get(i as i64 - l)) * theta.get(j as i64 - l).transpose();
        }
        s
    });
    (p, pinv)
}

/// Lags `g(k)`, `k = −w..=w`, of a density, from its factor:
/// `g(k) = Σ_m φ(m) φ(k+m)*`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagSequence {
    /// Smallest lag stored.
    pub k_min: i64,
    /// Matrices for `k_min..`.
    pub mats: Vec<CMat>,
}

impl LagSequence {
    /// Lag `k`, zero outside the window.
    pub fn get(&self, k: i64) -> CMat {
        let i = k - self.k_min;
        if i < 0 || i as usize >= self.mats.len() {
            CMat::zeros(self.mats[0].nrows(), self.mats[0].ncols())
        } else {
            self.mats[i as usize].clone()
        }
    }

    /// Window half-width.
    pub fn window(&self) -> i64 {
        -self.k_min
    }

    /// From a factor, `|k| ≤ w`.
    pub fn from_factor(phi: &FactorizationResult, w: usize) -> Self {
        let t = phi.dim();
        let n = phi.coeffs.len() as i64;
        let mats = (-(w as i64)..=w as i64)
            .map(|k| {
                let mut s = CMat::zeros(t, t);
                for m in 0..n {
                    if (0..n).contains(&(k + m)) {
                        s += &phi.coeffs[m as usize] * phi.coeffs[(k + m) as usize].adjoint();
                    }
                }
                s
            })
            .collect();
        LagSequence {
            k_min: -(w as i64),
            mats,
        }
    }

    /// From quadrature: `g(k) = (1/2π)∫ g e^{iλk}`.
    pub fn from_density(g: &SpectralDensityGrid, w: usize) -> Self {
        let table = FourierTable::new(&g.values);
        LagSequence {
            k_min: -(w as i64),
            mats: (-(w as i64)..=w as i64).map(|k| table.coeff(-k)).collect(),
        }
    }
}

/// `Z(n) = Σ_{m≥0} ψ̄(m) ḡ(m − n)`, the Toeplitz symbol of `Z_μ`.
pub fn z_lag(psi: &FactorizationResult, g: &LagSequence, n: i64) -> CMat {
    let t = psi.dim();
    let mut s = CMat::zeros(t, t);
    for (m, p) in psi.coeffs.iter().enumerate() {
        let gl = g.get(m as i64 - n);
        s += conj(p) * conj(&gl);
    }
    s
}

/// `Z_{k,j} = Σ_{l≥j} ψ̄(l−j) ḡ(l−k)` with `rows × cols` blocks.
pub fn build_z(
    psi: &FactorizationResult,
    g: &LagSequence,
    rows: usize,
    cols: usize,
    n: usize,
) -> Result<BlockOperator> {
    let need = psi.coeffs.len() as i64 + rows.max(cols) as i64;
    if g.window() < need {
        return Err(GmiError::InvalidSpec(format!(
            "lag window {} smaller than required {}",
            g.window(),
            need
        )));
    }
    let t = psi.dim();
    let lags: Vec<CMat> = (-(cols as i64) + 1..rows as i64)
        .map(|l| z_lag(psi, g, l))
        .collect();
    let off = cols as i64 - 1;
    Ok(BlockOperator::from_fn(
        rows,
        cols,
        t,
        n,
        OpRole::Z,
        |k, j| lags[(k as i64 - j as i64 + off) as usize].clone(),
    ))
}

/// `T = Ψᵀ Z`: `T_{k,j} = Σ_{m≥k} ψᵀ(m−k) Z(m−j)`.
pub fn t_from_factors(
    psi: &FactorizationResult,
    g: &LagSequence,
    rows: usize,
    cols: usize,
    n: usize,
) -> BlockOperator {
    let t = psi.dim();
    let kmax = psi.coeffs.len() as i64 - 1;
    let zl: Vec<CMat> = (-(cols as i64) + 1..=(rows as i64 + kmax))
        .map(|l| z_lag(psi, g, l))
        .collect();
    let off = cols as i64 - 1;
    BlockOperator::from_fn(rows, cols, t, n, OpRole::T, |k, j| {
        let mut s = CMat::zeros(t, t);
        for m in k as i64..=k as i64 + kmax {
            s += psi.get(m - k as i64).transpose() * &zl[(m - j as i64 + off) as usize];
        }
        s
    })
}

/// `⟨Q a, a⟩ = Σ_{l,k} (Q_{l,k} a(k))ᵀ conj(a(l))`.
pub fn quad_form(q: &BlockOperator, a: &WeightVector) -> Complex64 {
    q.apply(a).inner(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factorize::{factorize_increment_weighted, factorize_or_zero, invert_factor};
    use crate::linalg::{c64, frob, max_abs};
    use crate::spectra::{eval_density, DensityModel, Role};

    fn scalar_grid(model: &DensityModel, grid: usize) -> SpectralDensityGrid {
        eval_density(model, grid).unwrap()
    }

    #[test]
    fn zero_noise_gives_zero_t_and_q() {
        let spec = IncrementSpec::single(1, 1, 1, 1).unwrap();
        let f = scalar_grid(&DensityModel::scalar_ma(&[1.0, 0.3]), 512);
        let g = SpectralDensityGrid::zeros(512, 1, Role::G).unwrap();
        let (_, t, q) = build_ptq(&f, &g, &spec, 8).unwrap();
        assert!(max_abs(&t.mat) == 0.0 && max_abs(&q.mat) == 0.0);
    }

    #[test]
    fn p_matches_ar1_coefficients() {
        // d = 0, f = 0: P is the Toeplitz matrix of 1/g, g = |1 + 0.5 e^{-iλ}|²
        let spec = IncrementSpec::single(1, 1, 0, 1).unwrap();
        let f = SpectralDensityGrid::zeros(1024, 1, Role::F).unwrap();
        let g = scalar_grid(&DensityModel::scalar_ma(&[1.0, 0.5]), 1024);
        let (p, _, _) = build_ptq(&f, &g, &spec, 6).unwrap();
        // 1/|1+ρz|² has coefficients (-ρ)^{|k|}/(1-ρ²)
        let rho = 0.5_f64;
        for k in 0..7 {
            for j in 0..7 {
                let lag = (k as i32 - j as i32).abs();
                let want = (-rho).powi(lag) / (1.0 - rho * rho);
                assert!((p.block(k, j)[(0, 0)].re - want).abs() < 1e-12);
            }
        }
    }

    fn random_matrix_density(seed: u64, grid: usize) -> SpectralDensityGrid {
        let a = CMat::from_row_slice(
            2,
            2,
            &[
                c64(1.0, 0.0),
                c64(0.2, 0.1 * seed as f64),
                c64(-0.1, 0.3),
                c64(0.9, 0.0),
            ],
        );
        let b = CMat::from_row_slice(
            2,
            2,
            &[
                c64(0.3, 0.0),
                c64(0.1, 0.0),
                c64(0.05 * seed as f64, -0.2),
                c64(-0.2, 0.0),
            ],
        );
        scalar_grid(
            &DensityModel::Rational {
                num: vec![a, b],
                den: vec![],
            },
            grid,
        )
    }

    #[test]
    fn p_and_q_hermitian() {
        let spec = IncrementSpec::single(1, 2, 1, 2).unwrap();
        let f = random_matrix_density(1, 512);
        let g = random_matrix_density(2, 512).scaled(0.3);
        let (p, _, q) = build_ptq(&f, &g, &spec, 10).unwrap();
        assert!(
            p.hermitian_defect() < 1e-9,
            "P defect {} scale {}",
            p.hermitian_defect(),
            crate::linalg::max_abs(&p.mat)
        );
        assert!(
            q.hermitian_defect() < 1e-9,
            "Q defect {} scale {}",
            q.hermitian_defect(),
            crate::linalg::max_abs(&q.mat)
        );
        let a = WeightVector::from_real(0, &[vec![1.0, -0.5], vec![0.3, 0.2], vec![0.0, 1.0]]);
        let v = quad_form(&q, &a);
        assert!(v.im.abs() < 1e-10 && v.re >= -1e-9);
    }

    #[test]
    fn a_mu_examples() {
        let e = PolyCoeffs {
            coeffs: vec![1.0, -1.0],
        };
        let a = WeightVector::from_real(0, &[vec![1.0]]);
        let am = a_mu_weights(&a, &e);
        assert_eq!(am.entries, vec![vec![c64(1.0, 0.0)], vec![c64(-1.0, 0.0)]]);
        let id = PolyCoeffs { coeffs: vec![1.0] };
        let a = WeightVector::from_real(0, &[vec![0.3], vec![-2.0], vec![1.5]]);
        assert_eq!(a_mu_weights(&a, &id), a);
    }

    #[test]
    fn a_mu_matches_dense_convolution() {
        let e = PolyCoeffs {
            coeffs: vec![1.0, -0.7, 0.0, 0.4],
        };
        let raw: Vec<Vec<f64>> = (0..6)
            .map(|k| vec![(k as f64 * 1.3).sin(), (k as f64).cos()])
            .collect();
        let a = WeightVector::from_real(0, &raw);
        let am = a_mu_weights(&a, &e);
        for m in 0..9 {
            for c in 0..2 {
                let mut s = 0.0;
                for l in 0..6 {
                    for (j, &ej) in e.coeffs.iter().enumerate() {
                        if l + j == m {
                            s += ej * raw[l][c];
                        }
                    }
                }
                assert!((am.get(m as i64)[c].re - s).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn b_and_v_examples() {
        let spec = IncrementSpec::single(1, 1, 1, 1).unwrap();
        let a = WeightVector::from_real(0, &[vec![2.0]]);
        let (b, v) = b_and_v_weights(&a, &spec).unwrap();
        assert_eq!(b.entries, vec![vec![c64(2.0, 0.0)]]);
        assert_eq!(v.start, -1);
        assert_eq!(v.entries, vec![vec![c64(-2.0, 0.0)]]);
        let spec0 = IncrementSpec::single(1, 1, 0, 1).unwrap();
        let (_, v) = b_and_v_weights(&a, &spec0).unwrap();
        assert!(v.is_empty());
    }

    #[test]
    fn b_and_v_match_direct_sums() {
        let spec = IncrementSpec::new(
            vec![
                crate::increments::Pattern::integer(1, 2, 1),
                crate::increments::Pattern::integer(1, 1, 1),
            ],
            1,
        )
        .unwrap();
        let raw: Vec<Vec<f64>> = (0..5).map(|k| vec![1.0 / (1.0 + k as f64)]).collect();
        let a = WeightVector::from_real(0, &raw);
        let (b, v) = b_and_v_weights(&a, &spec).unwrap();
        let e = increment_polynomial(&spec).unwrap();
        let d = dmu_coefficients(&spec, 10).unwrap();
        let dmat = build_d(&spec, 4).unwrap();
        let b2 = dmat.apply(&a);
        for k in 0..5 {
            let direct: f64 = (k..5).map(|m| d.coeffs[m - k] * raw[m][0]).sum();
            assert!((b.get(k as i64)[0].re - direct).abs() < 1e-14);
            assert!((b2.get(k as i64)[0].re - direct).abs() < 1e-14);
        }
        let n = e.degree() as i64;
        for k in -n..0 {
            let direct: f64 = (0..5i64)
                .filter(|l| l - k <= n)
                .map(|l| e.get(l - k) * b.get(l)[0].re)
                .sum();
            assert!((v.get(k)[0].re - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn solve_c_trivial() {
        let p = BlockOperator::from_fn(3, 3, 1, 2, OpRole::P, |k, j| {
            CMat::from_element(1, 1, c64(if k == j { 2.0 } else { 0.1 }, 0.0))
        });
        let t = BlockOperator::from_fn(3, 4, 1, 2, OpRole::T, |_, _| CMat::zeros(1, 1));
        let b = WeightVector::zeros(0, 1, 1);
        let am = WeightVector::zeros(0, 1, 2);
        let s = solve_c(&p, &b, &t, &am).unwrap();
        assert!(s.c.max_abs() == 0.0);
    }

    #[test]
    fn factorized_p_cross_check() {
        let spec = IncrementSpec::single(1, 1, 1, 1).unwrap();
        let grid = 4096;
        let incr = scalar_grid(
            &DensityModel::scalar_arma(1.0, &[1.0, 0.4], &[1.0, -0.3]),
            grid,
        );
        let f = crate::spectra::increment_to_f(&incr, &spec).unwrap();
        let g = scalar_grid(&DensityModel::scalar_ma(&[0.5, 0.2]), grid);
        let n = 32;
        let (p, t, _) = build_ptq(&f, &g, &spec, n).unwrap();
        let theta = factorize_increment_weighted(&f, &g, &spec, 256).unwrap();
        let psi = invert_factor(&theta, 256).unwrap();
        let (pf, pinv) = factorized_p_inverse(&theta, &psi, n);
        let rel = frob(&(&pf.mat - &p.mat)) / frob(&p.mat);
        assert!(rel < 1e-4, "P relative error {rel}");
        // interior of P P^{-1} is the identity
        let prod = &pf.mat * &pinv.mat;
        for i in 0..8 {
            for j in 0..8 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)].re - want).abs() < 1e-6);
            }
        }
        let phi = factorize_or_zero(&g, 256).unwrap();
        let lags = LagSequence::from_factor(&phi, 256 + 2 * n + 2);
        let tf = t_from_factors(&psi, &lags, n + 1, n + 1, n);
        let rel = frob(&(&tf.mat - &t.mat)) / frob(&t.mat);
        assert!(rel < 1e-4, "T relative error {rel}");
        let quad = LagSequence::from_density(&g, 40);
        for k in -40..=40 {
            assert!(max_abs(&(quad.get(k) - lags.get(k))) < 1e-10);
        }
    }

    #[test]
    fn z_with_delta_psi() {
        let psi = FactorizationResult {
            coeffs: vec![CMat::identity(1, 1)],
            ..FactorizationResult::zero(1, 0)
        };
        let g = scalar_grid(&DensityModel::scalar_ma(&[1.0, 0.5, 0.25]), 256);
        let lags = LagSequence::from_density(&g, 20);
        let z = build_z(&psi, &lags, 4, 4, 3).unwrap();
        for k in 0..4 {
            for j in 0..4 {
                let want = lags.get(j as i64 - k as i64)[(0, 0)].conj();
                assert!((z.block(k, j)[(0, 0)] - want).norm() < 1e-14);
            }
        }
    }
}
