//! Small dense complex linear-algebra helpers over `nalgebra`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{GmiError, Result};

/// Dense complex matrix.
pub type CMat = DMatrix<Complex64>;

/// Shorthand constructor for a complex number.
#[inline]
pub fn c64(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// Zero complex constant.
pub const CZERO: Complex64 = Complex64::new(0.0, 0.0);
/// Unit complex constant.
pub const CONE: Complex64 = Complex64::new(1.0, 0.0);

/// `(A + A*) / 2`.
pub fn hermitian_part(a: &CMat) -> CMat {
    (a + a.adjoint()).scale(0.5)
}

/// Entrywise complex conjugate.
pub fn conj(a: &CMat) -> CMat {
    a.map(|z| z.conj())
}

/// Largest entry modulus.
pub fn max_abs(a: &CMat) -> f64 {
    a.iter().fold(0.0_f64, |m, z| m.max(z.norm()))
}

/// Frobenius norm.
pub fn frob(a: &CMat) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn eig_hermitian(a: &CMat) -> Vec<f64> {
    if a.nrows() == 1 {
        return vec![a[(0, 0)].re];
    }
    let e = hermitian_part(a).symmetric_eigen();
    let mut v: Vec<f64> = e.eigenvalues.iter().copied().collect();
    v.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    v
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eig(a: &CMat) -> f64 {
    eig_hermitian(a)[0]
}

/// Largest eigenvalue of a Hermitian matrix.
pub fn max_eig(a: &CMat) -> f64 {
    *eig_hermitian(a).last().unwrap_or(&0.0)
}

/// Inverse, `None` when singular. Scalars are handled without LU.
pub fn inverse(a: &CMat) -> Option<CMat> {
    if a.nrows() == 1 {
        let z = a[(0, 0)];
        if z.norm() == 0.0 || !z.is_finite() {
            return None;
        }
        return Some(CMat::from_element(1, 1, z.inv()));
    }
    a.clone().lu().try_inverse()
}

/// Lower Cholesky factor of a Hermitian positive-definite matrix.
pub fn cholesky_lower(a: &CMat) -> Option<CMat> {
    hermitian_part(a).cholesky().map(|c| c.l())
}

/// Solution of a dense system with one step of iterative refinement.
#[derive(Debug, Clone)]
pub struct DenseSolve {
    /// Solution vector.
    pub x: Vec<Complex64>,
    /// Pivot-ratio condition estimate of the LU factors.
    pub cond_estimate: f64,
    /// Relative residual after refinement.
    pub residual: f64,
}

/// Solves `A x = b` by LU with partial pivoting plus one refinement step.
pub fn solve_refined(a: &CMat, b: &[Complex64]) -> Result<DenseSolve> {
    let n = a.nrows();
    if a.ncols() != n || b.len() != n {
        return Err(GmiError::InvalidSpec(format!(
            "system shape {}x{} with rhs {}",
            n,
            a.ncols(),
            b.len()
        )));
    }
    let lu = a.clone().lu();
    let u = lu.u();
    let (mut umax, mut umin) = (0.0_f64, f64::INFINITY);
    for i in 0..n {
        let d = u[(i, i)].norm();
        umax = umax.max(d);
        umin = umin.min(d);
    }
    if !(umin > 0.0) || !umax.is_finite() {
        return Err(GmiError::Singular {
            context: "dense solve".into(),
            lambda: f64::NAN,
        });
    }
    let rhs = nalgebra::DVector::from_column_slice(b);
    let mut x = lu.solve(&rhs).ok_or(GmiError::Singular {
        context: "dense solve".into(),
        lambda: f64::NAN,
    })?;
    let r = &rhs - a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    let r = &rhs - a * &x;
    let bn = rhs.norm().max(f64::MIN_POSITIVE);
    Ok(DenseSolve {
        x: x.iter().copied().collect(),
        cond_estimate: umax / umin,
        residual: r.norm() / bn,
    })
}

/// Matrix-vector product on slices.
pub fn matvec(a: &CMat, x: &[Complex64]) -> Vec<Complex64> {
    let mut y = vec![CZERO; a.nrows()];
    for j in 0..a.ncols() {
        let xj = x[j];
        if xj == CZERO {
            continue;
        }
        for i in 0..a.nrows() {
            y[i] += a[(i, j)] * xj;
        }
    }
    y
}

/// `Σ x(k) conj(y(k))`.
pub fn inner(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a * b.conj()).sum()
}
