//! Robust estimation under spectral uncertainty: admissible classes, least
//! favourable densities (scalar solver), Lagrange-equation residuals for any
//! dimension, sampled saddle-point audits and a grid-search oracle.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::cointegrate::{coint_forecast, CointegrationSpec};
use crate::error::{GmiError, Result};
use crate::factorize::canonical_factorize;
use crate::forecast::{
    spectral_characteristic, spectral_characteristic_with, ForecastOptions, ForecastSolution,
    FunctionalSpec, ValueFunctional,
};
use crate::increments::IncrementSpec;
use crate::linalg::{c64, eig_hermitian, frob, min_eig, CMat};
use crate::spectra::{
    beta_abs2_on_grid, kernel_abs2_on_grid, synthesize_causal, Role, SpectralDensityGrid,
};

/// Damping of the fixed-point update.
pub const DEFAULT_DAMPING: f64 = 0.5;
/// Iteration cap of the solver.
pub const DEFAULT_MAX_ITER: usize = 500;
/// Target for the maximal Lagrange-equation residual.
pub const DEFAULT_SOLVER_TOL: f64 = 1e-6;
/// Relative tolerance of the sampled saddle inequalities.
pub const DEFAULT_SADDLE_TOL: f64 = 1e-4;
/// Degree of the random trigonometric perturbations.
pub const PERTURBATION_DEGREE: usize = 8;
/// History length of the Anderson acceleration.
pub const DEFAULT_ANDERSON_DEPTH: usize = 6;
/// Relative distance below which a bound counts as active.
pub const ACTIVE_TOL: f64 = 1e-9;
/// Factor length used by the factorized equation form.
pub const EQUATION_FACTOR_LEN: usize = 128;

/// How a matrix density enters a constraint.
#[derive(Debug, Clone, PartialEq)]
pub enum Aggregation {
    /// The matrix itself (Loewner order, matrix moments).
    Full,
    /// `Tr x`.
    Trace,
    /// Diagonal entries `x_kk`.
    Diagonal,
    /// `⟨B, x⟩ = Re Tr(B x)` for a Hermitian positive definite `B`.
    Inner(CMat),
}

/// Constraint level matching an [`Aggregation`].
#[derive(Debug, Clone, PartialEq)]
pub enum Level {
    /// One number (trace or inner-product constraints).
    Scalar(f64),
    /// One number per component (diagonal constraints).
    Components(Vec<f64>),
    /// Matrix level (full constraints; entrywise radii for balls).
    Matrix(CMat),
}

/// Admissible set of spectral densities.
#[derive(Debug, Clone, PartialEq)]
pub enum AdmissibleClass {
    /// `mean(|χ|²/|β|² agg f) = level`.
    Moment { agg: Aggregation, level: Level },
    /// `agg V ≤ agg x ≤ agg U`, `mean(agg x) = level`.
    Band {
        agg: Aggregation,
        lower: SpectralDensityGrid,
        upper: SpectralDensityGrid,
        level: Level,
    },
    /// `agg f ≥ (1 − ε) agg f₁`, `mean(|χ|²/|β|² agg f) = level`.
    Contaminated {
        agg: Aggregation,
        eps: f64,
        anchor: SpectralDensityGrid,
        level: Level,
    },
    /// `mean |agg(x − x₁)| ≤ radius` (entrywise for [`Aggregation::Full`]).
    L1Ball {
        agg: Aggregation,
        anchor: SpectralDensityGrid,
        radius: Level,
    },
}

fn agg_scalar(agg: &Aggregation, x: &CMat) -> f64 {
    match agg {
        Aggregation::Trace => x.trace().re,
        Aggregation::Inner(b) => (b * x).trace().re,
        _ => unreachable!("scalar aggregation"),
    }
}

/// Structure matrices `S_c` of the multiplier terms and the component
/// aggregators `a_c(x) = ⟨S_c-dual, x⟩`.
fn structures(agg: &Aggregation, t: usize) -> Vec<CMat> {
    match agg {
        Aggregation::Trace => vec![CMat::identity(t, t)],
        Aggregation::Inner(b) => vec![b.transpose()],
        Aggregation::Diagonal => (0..t)
            .map(|k| {
                let mut s = CMat::zeros(t, t);
                s[(k, k)] = c64(1.0, 0.0);
                s
            })
            .collect(),
        Aggregation::Full => vec![],
    }
}

fn components(agg: &Aggregation, x: &CMat) -> Vec<f64> {
    match agg {
        Aggregation::Diagonal => (0..x.nrows()).map(|k| x[(k, k)].re).collect(),
        Aggregation::Full => x.iter().map(|z| z.re).collect(),
        _ => vec![agg_scalar(agg, x)],
    }
}

fn level_components(level: &Level) -> Vec<f64> {
    match level {
        Level::Scalar(v) => vec![*v],
        Level::Components(v) => v.clone(),
        Level::Matrix(m) => m.iter().map(|z| z.re).collect(),
    }
}

fn mean_mat(x: &[CMat], w: Option<&[f64]>) -> CMat {
    let t = x[0].nrows();
    let mut acc = CMat::zeros(t, t);
    for (i, v) in x.iter().enumerate() {
        acc += v.scale(w.map(|w| w[i]).unwrap_or(1.0));
    }
    acc / c64(x.len() as f64, 0.0)
}

fn inner_re(a: &CMat, b: &CMat) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x * y.conj()).re).sum()
}

impl AdmissibleClass {
    /// Position of the class within its family (one-based).
    pub fn variant_index(&self) -> usize {
        match self {
            AdmissibleClass::Moment { agg, .. } | AdmissibleClass::Band { agg, .. } => match agg {
                Aggregation::Full => 1,
                Aggregation::Trace => 2,
                Aggregation::Diagonal => 3,
                Aggregation::Inner(_) => 4,
            },
            AdmissibleClass::Contaminated { agg, .. } | AdmissibleClass::L1Ball { agg, .. } => {
                match agg {
                    Aggregation::Trace => 1,
                    Aggregation::Diagonal => 2,
                    Aggregation::Inner(_) => 3,
                    Aggregation::Full => 4,
                }
            }
        }
    }

    /// Short label, `second` naming the noise (`g`) or observation (`p`) density.
    pub fn label(&self, second: char) -> String {
        let k = self.variant_index();
        match self {
            AdmissibleClass::Moment { .. } => format!("D_f0^{k}"),
            AdmissibleClass::Band { .. } => format!("D_V{second}^U{k}"),
            AdmissibleClass::Contaminated { .. } => format!("D_feps^{k}"),
            AdmissibleClass::L1Ball { .. } => format!("D_{second}1delta^{k}"),
        }
    }

    fn agg(&self) -> &Aggregation {
        match self {
            AdmissibleClass::Moment { agg, .. }
            | AdmissibleClass::Band { agg, .. }
            | AdmissibleClass::Contaminated { agg, .. }
            | AdmissibleClass::L1Ball { agg, .. } => agg,
        }
    }

    /// Grid carried by the class data, if any.
    pub fn grid(&self) -> Option<usize> {
        match self {
            AdmissibleClass::Moment { .. } => None,
            AdmissibleClass::Band { lower, .. } => Some(lower.grid_size()),
            AdmissibleClass::Contaminated { anchor, .. }
            | AdmissibleClass::L1Ball { anchor, .. } => Some(anchor.grid_size()),
        }
    }

    /// Checks shapes, signs and consistency for dimension `t`.
    pub fn validate(&self, t: usize) -> Result<()> {
        let agg = self.agg();
        if let Aggregation::Inner(b) = agg {
            if b.nrows() != t
                || b.ncols() != t
                || min_eig(b) <= 0.0
                || frob(&(b - b.adjoint())) > 1e-12 * frob(b)
            {
                return Err(GmiError::InvalidSpec(
                    "inner-product matrix must be Hermitian positive definite of size T".into(),
                ));
            }
        }
        let level = match self {
            AdmissibleClass::Moment { level, .. }
            | AdmissibleClass::Band { level, .. }
            | AdmissibleClass::Contaminated { level, .. } => level,
            AdmissibleClass::L1Ball { radius, .. } => radius,
        };
        let shape_ok = match (agg, level) {
            (Aggregation::Full, Level::Matrix(m)) => m.nrows() == t && m.ncols() == t,
            (Aggregation::Diagonal, Level::Components(v)) => v.len() == t,
            (Aggregation::Trace | Aggregation::Inner(_), Level::Scalar(_)) => true,
            _ => false,
        };
        if !shape_ok {
            return Err(GmiError::InvalidSpec(
                "constraint level does not match the aggregation".into(),
            ));
        }
        let positive = match (self, level) {
            (AdmissibleClass::L1Ball { .. }, _) => level_components(level)
                .iter()
                .all(|v| *v >= 0.0 && v.is_finite()),
            (_, Level::Matrix(m)) => min_eig(m) > 0.0,
            _ => level_components(level)
                .iter()
                .all(|v| *v > 0.0 && v.is_finite()),
        };
        if !positive {
            return Err(GmiError::InvalidSpec(
                "moment constants must be positive and radii nonnegative".into(),
            ));
        }
        let check_dim = |g: &SpectralDensityGrid| -> Result<()> {
            if g.dim() != t {
                return Err(GmiError::InvalidSpec(
                    "class density has the wrong dimension".into(),
                ));
            }
            Ok(())
        };
        match self {
            AdmissibleClass::Band { lower, upper, .. } => {
                check_dim(lower)?;
                check_dim(upper)?;
                lower.same_grid(upper)?;
                for m in 0..lower.grid_size() {
                    let (v, u) = (&lower.values[m], &upper.values[m]);
                    let scale = frob(u).max(frob(v)).max(1e-300);
                    let ok = match agg {
                        Aggregation::Full => min_eig(&(u - v)) >= -1e-12 * scale,
                        _ => components(agg, v)
                            .iter()
                            .zip(components(agg, u))
                            .all(|(a, b)| *a <= b + 1e-12 * scale),
                    };
                    if !ok {
                        return Err(GmiError::InvalidSpec(format!(
                            "band violates V <= U at lambda = {}",
                            lower.lambda(m)
                        )));
                    }
                }
            }
            AdmissibleClass::Contaminated { eps, anchor, .. } => {
                check_dim(anchor)?;
                if !(0.0..1.0).contains(eps) {
                    return Err(GmiError::InvalidSpec(
                        "contamination level must lie in [0, 1)".into(),
                    ));
                }
            }
            AdmissibleClass::L1Ball { anchor, .. } => check_dim(anchor)?,
            AdmissibleClass::Moment { .. } => {}
        }
        Ok(())
    }

    /// Membership test with relative tolerance `tol`; `k2 = |χ|²/|β|²`.
    pub fn contains(&self, x: &SpectralDensityGrid, k2: &[f64], tol: f64) -> bool {
        let agg = self.agg();
        let scale = x.sup_norm().max(1e-300);
        if x.check_psd(tol).is_err() {
            return false;
        }
        let close = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .all(|(u, v)| (u - v).abs() <= tol * v.abs().max(scale))
        };
        let moment = |w: Option<&[f64]>, level: &Level| {
            close(
                &components(agg, &mean_mat(&x.values, w)),
                &level_components(level),
            )
        };
        let above = |lo: &CMat, v: &CMat| match agg {
            Aggregation::Full => min_eig(&(v - lo)) >= -tol * scale,
            _ => components(agg, v)
                .iter()
                .zip(components(agg, lo))
                .all(|(a, b)| *a >= b - tol * scale),
        };
        match self {
            AdmissibleClass::Moment { level, .. } => moment(Some(k2), level),
            AdmissibleClass::Band {
                lower,
                upper,
                level,
                ..
            } => {
                moment(None, level)
                    && x.values
                        .iter()
                        .zip(&lower.values)
                        .zip(&upper.values)
                        .all(|((v, lo), hi)| above(lo, v) && above(v, hi))
            }
            AdmissibleClass::Contaminated {
                eps, anchor, level, ..
            } => {
                moment(Some(k2), level)
                    && x.values
                        .iter()
                        .zip(&anchor.values)
                        .all(|(v, a)| above(&a.scale(1.0 - eps), v))
            }
            AdmissibleClass::L1Ball { anchor, radius, .. } => {
                let r = level_components(radius);
                let mut used = vec![0.0; r.len()];
                for (v, a) in x.values.iter().zip(&anchor.values) {
                    let diff = match agg {
                        Aggregation::Full => (v - a).iter().map(|z| z.norm()).collect(),
                        _ => components(agg, &(v - a))
                            .iter()
                            .map(|z| z.abs())
                            .collect::<Vec<f64>>(),
                    };
                    for (u, dlt) in used.iter_mut().zip(diff) {
                        *u += dlt / x.grid_size() as f64;
                    }
                }
                used.iter()
                    .zip(&r)
                    .all(|(u, r)| *u <= r + tol * r.max(scale))
            }
        }
    }

    /// Scalar (`T = 1`) box-and-moment form of the class.
    pub fn scalar_rule(&self, k2: &[f64]) -> Result<ScalarRule> {
        let grid = k2.len();
        self.validate(1)?;
        let factor = match self.agg() {
            Aggregation::Inner(b) => b[(0, 0)].re,
            _ => 1.0,
        };
        let level = match self {
            AdmissibleClass::Moment { level, .. }
            | AdmissibleClass::Band { level, .. }
            | AdmissibleClass::Contaminated { level, .. } => level,
            AdmissibleClass::L1Ball { radius, .. } => radius,
        };
        let v = level_components(level)[0] / factor;
        let check = |g: &SpectralDensityGrid| -> Result<Vec<f64>> {
            if g.grid_size() != grid {
                return Err(GmiError::GridMismatch(
                    "class density grid differs from the working grid".into(),
                ));
            }
            Ok(g.scalar_samples())
        };
        let rule = match self {
            AdmissibleClass::Moment { .. } => ScalarRule {
                lower: vec![0.0; grid],
                upper: vec![f64::INFINITY; grid],
                weight: k2.to_vec(),
                target: v,
                budget: false,
            },
            AdmissibleClass::Band { lower, upper, .. } => ScalarRule {
                lower: check(lower)?,
                upper: check(upper)?,
                weight: vec![1.0; grid],
                target: v,
                budget: false,
            },
            AdmissibleClass::Contaminated { eps, anchor, .. } => ScalarRule {
                lower: check(anchor)?.iter().map(|a| (1.0 - eps) * a).collect(),
                upper: vec![f64::INFINITY; grid],
                weight: k2.to_vec(),
                target: v,
                budget: false,
            },
            AdmissibleClass::L1Ball { anchor, .. } => {
                let lo = check(anchor)?;
                let base = lo.iter().sum::<f64>() / grid as f64;
                ScalarRule {
                    lower: lo,
                    upper: vec![f64::INFINITY; grid],
                    weight: vec![1.0; grid],
                    target: base + v,
                    budget: true,
                }
            }
        };
        let lo_mass = rule.mass(&rule.lower);
        let hi_mass = rule.mass(&rule.upper);
        let tol = 1e-12 * rule.target.abs().max(1.0);
        if lo_mass > rule.target + tol || (hi_mass.is_finite() && hi_mass < rule.target - tol) {
            return Err(GmiError::InvalidSpec(format!(
                "class is empty: constraint level {} outside [{lo_mass}, {hi_mass}]",
                rule.target
            )));
        }
        Ok(rule)
    }
}

/// Box constraints `lower ≤ x ≤ upper` with `mean(weight · x) = target`
/// (`≤ target` when `budget`).
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarRule {
    /// Pointwise lower bound.
    pub lower: Vec<f64>,
    /// Pointwise upper bound (may be infinite).
    pub upper: Vec<f64>,
    /// Constraint weight.
    pub weight: Vec<f64>,
    /// Constraint level.
    pub target: f64,
    /// Inequality (ball) constraint; the solver uses it with equality.
    pub budget: bool,
}

impl ScalarRule {
    /// `mean(weight · x)`.
    pub fn mass(&self, x: &[f64]) -> f64 {
        x.iter()
            .zip(&self.weight)
            .map(|(a, w)| if *w == 0.0 { 0.0 } else { a * w })
            .sum::<f64>()
            / x.len() as f64
    }

    fn clamp(&self, i: usize, v: f64) -> f64 {
        v.max(self.lower[i]).min(self.upper[i])
    }

    /// Solves `mass(build(t)) = target` for `t ≥ 0`, `build` nondecreasing in `t`.
    pub fn fit_with<F: Fn(f64) -> Vec<f64>>(
        &self,
        target: f64,
        build: F,
    ) -> Result<(f64, Vec<f64>)> {
        let tol = 1e-14 * target.abs().max(1e-300);
        let x0 = build(0.0);
        if self.mass(&x0) >= target - tol {
            return Ok((0.0, x0));
        }
        let mut hi = 1.0;
        let mut doublings = 0;
        while self.mass(&build(hi)) < target {
            hi *= 2.0;
            doublings += 1;
            if doublings > 400 {
                return Err(GmiError::Unbounded(
                    "constraint level not reachable by the update".into(),
                ));
            }
        }
        let mut lo = 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if self.mass(&build(mid)) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((hi, build(hi)))
    }

    /// Nearest-shift projection: `clamp(x + s)` meeting the constraint level.
    pub fn project(&self, x: &[f64]) -> Result<Vec<f64>> {
        let shift = x
            .iter()
            .zip(&self.lower)
            .map(|(a, b)| a - b)
            .fold(0.0, f64::max)
            + 1.0;
        Ok(self
            .fit(|t| {
                (0..x.len())
                    .map(|i| self.clamp(i, x[i] - shift + t))
                    .collect()
            })?
            .1)
    }

    /// [`ScalarRule::fit_with`] at the rule's own level.
    pub fn fit<F: Fn(f64) -> Vec<f64>>(&self, build: F) -> Result<(f64, Vec<f64>)> {
        self.fit_with(self.target, build)
    }

    /// Water-level starting point `min(lower + t, upper)`.
    pub fn initial(&self) -> Result<Vec<f64>> {
        Ok(self
            .fit(|t| {
                (0..self.lower.len())
                    .map(|i| self.clamp(i, self.lower[i] + t))
                    .collect()
            })?
            .1)
    }

    /// Random admissible density: `min(lower + t q, upper)` with `q` a random
    /// nonnegative trigonometric polynomial of the given degree.
    pub fn sample(&self, rng: &mut ChaCha8Rng, degree: usize) -> Result<Vec<f64>> {
        let grid = self.lower.len();
        let c: Vec<f64> = (0..=degree).map(|_| StandardNormal.sample(rng)).collect();
        let mut q: Vec<f64> = (0..grid)
            .map(|m| {
                let lam = crate::spectra::grid_lambda(m, grid);
                let z: Complex64 = c
                    .iter()
                    .enumerate()
                    .map(|(k, ck)| Complex64::from_polar(*ck, lam * k as f64))
                    .sum();
                z.norm_sqr()
            })
            .collect();
        let mean = q.iter().sum::<f64>() / grid as f64;
        for v in &mut q {
            *v += 0.05 * mean + 1e-300;
        }
        let target = if self.budget {
            let base = self.mass(&self.lower);
            base + rng.random::<f64>() * (self.target - base)
        } else {
            self.target
        };
        Ok(self
            .fit_with(target, |t| {
                (0..grid)
                    .map(|i| self.clamp(i, self.lower[i] + t * q[i]))
                    .collect()
            })?
            .1)
    }
}

/// Pair of classes for `(f, g)`, or for `(f, p)` when a cointegrating
/// constant is given.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassPair {
    /// Class of `f`.
    pub f: AdmissibleClass,
    /// Class of `g` (or of `p` for cointegrated sequences).
    pub second: AdmissibleClass,
    /// Cointegrating constant `α`, if the second class constrains `p`.
    pub alpha: Option<f64>,
}

impl ClassPair {
    /// Validated pair.
    pub fn new(
        f: AdmissibleClass,
        second: AdmissibleClass,
        alpha: Option<f64>,
        t: usize,
    ) -> Result<Self> {
        if !matches!(
            f,
            AdmissibleClass::Moment { .. } | AdmissibleClass::Contaminated { .. }
        ) {
            return Err(GmiError::InvalidSpec(
                "the class of f must be a moment or contamination class".into(),
            ));
        }
        if !matches!(
            second,
            AdmissibleClass::Band { .. } | AdmissibleClass::L1Ball { .. }
        ) {
            return Err(GmiError::InvalidSpec(
                "the second class must be a band or L1-ball class".into(),
            ));
        }
        if let Some(a) = alpha {
            if a == 0.0 || !a.is_finite() {
                return Err(GmiError::InvalidSpec(
                    "cointegrating constant must be finite and nonzero".into(),
                ));
            }
        }
        f.validate(t)?;
        second.validate(t)?;
        if let (Some(a), Some(b)) = (f.grid(), second.grid()) {
            if a != b {
                return Err(GmiError::GridMismatch(format!(
                    "class grids differ: {a} vs {b}"
                )));
            }
        }
        Ok(ClassPair { f, second, alpha })
    }

    /// Working grid (from the class data).
    pub fn grid(&self) -> usize {
        self.second
            .grid()
            .or(self.f.grid())
            .expect("second class carries a grid")
    }

    /// Label such as `D_f0^1 x D_Vg^U1`.
    pub fn label(&self) -> String {
        let s = if self.alpha.is_some() { 'p' } else { 'g' };
        format!("{} x {}", self.f.label(s), self.second.label(s))
    }
}

/// Lagrange multiplier values of one equation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Multiplier {
    /// Vector multiplier `α` entering as `α α*`.
    Vector(Vec<Complex64>),
    /// Squared multipliers per component (`α²`, `α_k²`, or `β_ij` entrywise).
    Components(Vec<f64>),
}

/// Multipliers of the two equations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Multipliers {
    /// Multiplier of the `f` equation.
    pub f: Multiplier,
    /// Multiplier of the `g` (or `p`) equation.
    pub second: Multiplier,
}

/// Which sandwich the equations are written with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EquationForm {
    /// `W (·) W` with `W = |χ|²/|β|² (f + |β|² g)`.
    Density,
    /// `Θᵀ (·) Θ̄` with `Θ` the canonical factor of `W`.
    Factorized,
}

/// Residuals of the least-favourable equations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaddleReport {
    /// Class pair label.
    pub variant: String,
    /// Equation form used.
    pub form: EquationForm,
    /// Multiplier values (estimated unless supplied).
    pub multipliers: Multipliers,
    /// Residual of the `f` equation per grid point.
    pub residual_f: Vec<f64>,
    /// Residual of the second equation per grid point.
    pub residual_second: Vec<f64>,
    /// Slackness function of the `f` equation (`γ₁`, signed).
    pub gamma_f: Vec<f64>,
    /// Slackness function of the second equation (`γ₁ + γ₂` for bands,
    /// `γ₂` for balls).
    pub gamma_second: Vec<f64>,
    /// `|mean|agg(x − x₁)| − radius|` for ball classes.
    pub budget_residual: Option<f64>,
    /// Grid points left out of the equations.
    pub excluded_points: usize,
    /// Largest residual.
    pub max_violation: f64,
    /// `max_violation ≤ tol`.
    pub pass: bool,
    /// Solver iterations, if produced by the solver.
    pub iterations: Option<usize>,
    /// Worst-case (classical) mean-square error at the pair.
    pub worst_case_mse: f64,
    /// Sign conventions of the slackness functions.
    pub sign_conventions: Vec<String>,
}

impl SaddleReport {
    /// JSON export.
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("report serializes")
    }
}

struct ClassResidual {
    residual: Vec<f64>,
    gamma: Vec<f64>,
    multiplier: Multiplier,
    budget: Option<f64>,
}

fn sandwich(l: &CMat, x: &CMat, r: &CMat) -> f64 {
    frob(&(l * x * r))
}

fn signed_extreme(v: &[f64]) -> f64 {
    v.iter()
        .copied()
        .fold(0.0, |a, b| if b.abs() > a.abs() { b } else { a })
}

/// Residual of one class equation given gradient matrices `k`, the density
/// `x`, sandwich factors and an exclusion mask.
fn class_residual(
    class: &AdmissibleClass,
    k: &[CMat],
    x: &[CMat],
    sand: &[(CMat, CMat)],
    excluded: &[bool],
    supplied: Option<&Multiplier>,
) -> Result<ClassResidual> {
    let grid = k.len();
    let t = k[0].nrows();
    let agg = class.agg();
    let lower: Vec<CMat> = match class {
        AdmissibleClass::Moment { .. } => vec![CMat::zeros(t, t); grid],
        AdmissibleClass::Band { lower, .. } => lower.values.clone(),
        AdmissibleClass::Contaminated { eps, anchor, .. } => {
            anchor.values.iter().map(|a| a.scale(1.0 - eps)).collect()
        }
        AdmissibleClass::L1Ball { anchor, .. } => anchor.values.clone(),
    };
    let upper: Option<&Vec<CMat>> = match class {
        AdmissibleClass::Band { upper, .. } => Some(&upper.values),
        _ => None,
    };
    let xscale = x.iter().map(frob).fold(0.0, f64::max).max(1e-300);
    let tol = ACTIVE_TOL * xscale;
    let mut residual = vec![0.0; grid];
    let mut gamma = vec![0.0; grid];
    let include: Vec<usize> = (0..grid).filter(|&m| !excluded[m]).collect();

    if let AdmissibleClass::L1Ball { radius, .. } = class {
        // K = β² γ S per component (entrywise for Full), |γ| ≤ 1, γ = sign where moved
        let entrywise = matches!(agg, Aggregation::Full);
        let ncomp = if entrywise {
            t * t
        } else {
            structures(agg, t).len()
        };
        let structs = structures(agg, t);
        let comp_of = |m: &CMat, c: usize| -> Complex64 {
            if entrywise {
                m[(c / t, c % t)]
            } else {
                c64(
                    inner_re(m, &structs[c]) / inner_re(&structs[c], &structs[c]),
                    0.0,
                )
            }
        };
        let delta_of = |m: usize, c: usize| -> Complex64 {
            let dx = &x[m] - &lower[m];
            if entrywise {
                dx[(c / t, c % t)]
            } else {
                c64(components(agg, &dx)[c], 0.0)
            }
        };
        let beta2: Vec<f64> = match supplied {
            Some(Multiplier::Components(v)) if v.len() == ncomp => v.clone(),
            Some(_) => {
                return Err(GmiError::InvalidSpec(
                    "multiplier shape does not match the class".into(),
                ))
            }
            None => (0..ncomp)
                .map(|c| {
                    let moved: Vec<f64> = include
                        .iter()
                        .filter(|&&m| delta_of(m, c).norm() > tol)
                        .map(|&m| comp_of(&k[m], c).norm())
                        .collect();
                    if moved.is_empty() {
                        include
                            .iter()
                            .map(|&m| comp_of(&k[m], c).norm())
                            .fold(0.0, f64::max)
                    } else {
                        moved.iter().sum::<f64>() / moved.len() as f64
                    }
                })
                .collect(),
        };
        let bscale = beta2.iter().copied().fold(0.0, f64::max).max(1e-300);
        for &m in &include {
            let mut worst = 0.0_f64;
            let mut g = Vec::with_capacity(ncomp);
            for c in 0..ncomp {
                let kc = comp_of(&k[m], c);
                let dx = delta_of(m, c);
                let b2 = beta2[c].max(1e-300);
                let v = if dx.norm() > tol {
                    (kc - dx / dx.norm() * b2).norm() / bscale
                } else {
                    (kc.norm() - b2).max(0.0) / bscale
                };
                worst = worst.max(v);
                g.push(kc.re / b2);
            }
            residual[m] = worst;
            gamma[m] = signed_extreme(&g);
        }
        let r = level_components(radius);
        let mut used = vec![0.0; ncomp];
        for m in 0..grid {
            for (c, u) in used.iter_mut().enumerate() {
                *u += delta_of(m, c).norm() / grid as f64;
            }
        }
        let budget = used
            .iter()
            .zip(&r)
            .map(|(u, r)| (u - r).abs() / r.max(1e-300))
            .fold(0.0, f64::max);
        return Ok(ClassResidual {
            residual,
            gamma,
            multiplier: Multiplier::Components(beta2),
            budget: Some(budget),
        });
    }

    if let Aggregation::Full = agg {
        let is_interior = |m: usize| -> (bool, bool) {
            let lo = min_eig(&(&x[m] - &lower[m])) <= tol;
            let hi = upper
                .map(|u| min_eig(&(&u[m] - &x[m])) <= tol)
                .unwrap_or(false);
            (lo, hi)
        };
        let alpha: Vec<Complex64> = match supplied {
            Some(Multiplier::Vector(v)) if v.len() == t => v.clone(),
            Some(_) => {
                return Err(GmiError::InvalidSpec(
                    "multiplier shape does not match the class".into(),
                ))
            }
            None => {
                let pts: Vec<usize> = include
                    .iter()
                    .copied()
                    .filter(|&m| is_interior(m) == (false, false))
                    .collect();
                let pts = if pts.is_empty() { include.clone() } else { pts };
                let avg = pts.iter().fold(CMat::zeros(t, t), |a, &m| a + &k[m])
                    / c64(pts.len().max(1) as f64, 0.0);
                let eig = avg.symmetric_eigen();
                let (imax, lmax) = eig
                    .eigenvalues
                    .iter()
                    .enumerate()
                    .fold((0, f64::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
                eig.eigenvectors
                    .column(imax)
                    .iter()
                    .map(|z| z * lmax.max(0.0).sqrt())
                    .collect()
            }
        };
        let av = CMat::from_column_slice(t, 1, &alpha);
        let mmat = &av * av.adjoint();
        for &m in &include {
            let (l, r) = &sand[m];
            let norm = sandwich(l, &mmat, r).max(1e-300);
            let g = &k[m] - &mmat;
            let (lo, hi) = is_interior(m);
            let ev = eig_hermitian(&g);
            let (emin, emax) = (
                ev.first().copied().unwrap_or(0.0),
                ev.last().copied().unwrap_or(0.0),
            );
            residual[m] = match (lo, hi) {
                (false, false) => sandwich(l, &g, r) / norm,
                (true, false) => emax.max(0.0) * frob(&(l * r)) / norm,
                (false, true) => (-emin).max(0.0) * frob(&(l * r)) / norm,
                (true, true) => 0.0,
            };
            gamma[m] = if lo || hi {
                if emax.abs() > emin.abs() {
                    emax
                } else {
                    emin
                }
            } else {
                0.0
            };
        }
        return Ok(ClassResidual {
            residual,
            gamma,
            multiplier: Multiplier::Vector(alpha),
            budget: None,
        });
    }

    let structs = structures(agg, t);
    let nc = structs.len();
    let proj = |m: &CMat, c: usize| inner_re(m, &structs[c]) / inner_re(&structs[c], &structs[c]);
    let activity = |m: usize, c: usize| -> (bool, bool) {
        let xv = components(agg, &x[m])[c];
        let lo = xv - components(agg, &lower[m])[c] <= tol;
        let hi = upper
            .map(|u| components(agg, &u[m])[c] - xv <= tol)
            .unwrap_or(false);
        (lo, hi)
    };
    let mu: Vec<f64> = match supplied {
        Some(Multiplier::Components(v)) if v.len() == nc => v.clone(),
        Some(_) => {
            return Err(GmiError::InvalidSpec(
                "multiplier shape does not match the class".into(),
            ))
        }
        None => (0..nc)
            .map(|c| {
                let pts: Vec<f64> = include
                    .iter()
                    .filter(|&&m| activity(m, c) == (false, false))
                    .map(|&m| proj(&k[m], c))
                    .collect();
                if pts.is_empty() {
                    // every point on a bound: any level between the two sides
                    let lo_max = include
                        .iter()
                        .filter(|&&m| activity(m, c).0)
                        .map(|&m| proj(&k[m], c))
                        .fold(f64::MIN, f64::max);
                    let hi_min = include
                        .iter()
                        .filter(|&&m| activity(m, c).1)
                        .map(|&m| proj(&k[m], c))
                        .fold(f64::MAX, f64::min);
                    match (lo_max > f64::MIN, hi_min < f64::MAX) {
                        (true, true) => 0.5 * (lo_max + hi_min),
                        (true, false) => lo_max,
                        (false, true) => hi_min,
                        _ => 0.0,
                    }
                } else {
                    pts.iter().sum::<f64>() / pts.len() as f64
                }
            })
            .collect(),
    };
    let mmat = structs
        .iter()
        .zip(&mu)
        .fold(CMat::zeros(t, t), |a, (s, v)| a + s.scale(*v));
    for &m in &include {
        let (l, r) = &sand[m];
        let norm = sandwich(l, &mmat, r).max(1e-300);
        let mut fitted = mmat.clone();
        let mut worst = 0.0_f64;
        let mut g = Vec::with_capacity(nc);
        for c in 0..nc {
            let gc = proj(&k[m], c) - mu[c];
            fitted += structs[c].scale(gc);
            let (lo, hi) = activity(m, c);
            let viol = match (lo, hi) {
                (false, false) => gc.abs(),
                (true, false) => gc.max(0.0),
                (false, true) => (-gc).max(0.0),
                (true, true) => 0.0,
            };
            worst = worst.max(viol * sandwich(l, &structs[c], r) / norm);
            g.push(if lo || hi { gc } else { 0.0 });
        }
        let unexplained = sandwich(l, &(&k[m] - fitted), r) / norm;
        residual[m] = worst.max(unexplained);
        gamma[m] = signed_extreme(&g);
    }
    Ok(ClassResidual {
        residual,
        gamma,
        multiplier: Multiplier::Components(mu),
        budget: None,
    })
}

fn no_check(n: usize) -> ForecastOptions {
    ForecastOptions {
        trunc: n,
        check_truncation: false,
        filter_lags: Some(1),
    }
}

fn grid_from_scalar(v: &[f64], role: Role) -> Result<SpectralDensityGrid> {
    SpectralDensityGrid::from_scalar(v, role)
}

fn sign_conventions() -> Vec<String> {
    vec![
        "gamma_f <= 0, nonzero only where the lower envelope of f is active".into(),
        "band classes: gamma_second <= 0 only at the lower band, >= 0 only at the upper band, 0 strictly inside".into(),
        "ball classes: gamma_second = sign(x - x1) where x != x1, |gamma_second| <= 1 elsewhere".into(),
    ]
}

/// Assembles both least-favourable equations at a candidate pair.
#[allow(clippy::too_many_arguments)]
fn equations_at(
    f0: &SpectralDensityGrid,
    s0: &SpectralDensityGrid,
    pair: &ClassPair,
    spec: &IncrementSpec,
    fnl: &FunctionalSpec,
    trunc: usize,
    supplied: Option<&Multipliers>,
    form: EquationForm,
    tol: f64,
) -> Result<(SaddleReport, ForecastSolution)> {
    let grid = f0.grid_size();
    f0.same_grid(s0)?;
    if pair.grid() != grid {
        return Err(GmiError::GridMismatch(
            "densities and class data use different grids".into(),
        ));
    }
    if f0.dim() != spec.period {
        return Err(GmiError::InvalidSpec(
            "density dimension differs from the period".into(),
        ));
    }
    let vf = ValueFunctional::new(spec, fnl, grid)?;
    let k2 = kernel_abs2_on_grid(spec, grid);
    let b2 = beta_abs2_on_grid(spec, grid);
    let b2max = b2.iter().copied().fold(0.0, f64::max);
    let tiny = 1e-12 * b2max.max(1e-300);
    let (sol, hk, w): (ForecastSolution, Vec<Vec<Complex64>>, Vec<CMat>) = match pair.alpha {
        None => {
            let sol = spectral_characteristic_with(f0, s0, spec, fnl, &no_check(trunc))?;
            let hk = sol.h_over_kernel.clone();
            let w = (0..grid)
                .map(|m| (&f0.values[m] + s0.values[m].scale(b2[m])).scale(k2[m]))
                .collect();
            (sol, hk, w)
        }
        Some(a) => {
            let cs = CointegrationSpec::new(a, f0.clone(), s0.clone())?;
            let sol = coint_forecast(&cs, spec, fnl, trunc)?;
            let hk = sol
                .h_over_kernel
                .iter()
                .map(|v| v.iter().map(|z| z * a).collect())
                .collect();
            let w = (0..grid).map(|m| s0.values[m].scale(k2[m])).collect();
            (sol, hk, w)
        }
    };
    let errs = vf.error_vectors(&hk);
    let mut kf = Vec::with_capacity(grid);
    let mut ks = Vec::with_capacity(grid);
    let mut excl_f = vec![false; grid];
    let mut excl_s = vec![false; grid];
    let unbounded_second = !matches!(pair.second, AdmissibleClass::Band { .. });
    for (m, (d, e)) in errs.iter().enumerate() {
        let dd = d * d.adjoint();
        let ee = e * e.adjoint();
        match pair.alpha {
            None => {
                kf.push(dd);
                ks.push(ee);
                excl_s[m] = b2[m] <= tiny && unbounded_second;
            }
            Some(a) => {
                let chi2 = k2[m] * b2[m];
                if b2[m] <= tiny || chi2 <= tiny {
                    excl_f[m] = true;
                    excl_s[m] = true;
                    kf.push(dd);
                    ks.push(ee);
                } else {
                    kf.push(dd - ee.scale(1.0 / chi2));
                    ks.push(ee.scale(1.0 / (a * a * b2[m])));
                }
            }
        }
    }
    let sand: Vec<(CMat, CMat)> = match form {
        EquationForm::Density => w.iter().map(|x| (x.clone(), x.clone())).collect(),
        EquationForm::Factorized => {
            let wg = SpectralDensityGrid::new(w.clone(), Role::Other)?;
            let theta = canonical_factorize(&wg, EQUATION_FACTOR_LEN.min(grid / 4))?;
            synthesize_causal(&theta.coeffs, grid)
                .into_iter()
                .map(|th| (th.transpose(), th.map(|z| z.conj())))
                .collect()
        }
    };
    let rf = class_residual(
        &pair.f,
        &kf,
        &f0.values,
        &sand,
        &excl_f,
        supplied.map(|s| &s.f),
    )?;
    let rs = class_residual(
        &pair.second,
        &ks,
        &s0.values,
        &sand,
        &excl_s,
        supplied.map(|s| &s.second),
    )?;
    let max_violation = rf
        .residual
        .iter()
        .chain(&rs.residual)
        .copied()
        .chain(rs.budget)
        .fold(0.0, f64::max);
    let excluded_points = excl_f
        .iter()
        .zip(&excl_s)
        .filter(|(a, b)| **a || **b)
        .count();
    let report = SaddleReport {
        variant: pair.label(),
        form,
        multipliers: Multipliers {
            f: rf.multiplier,
            second: rs.multiplier,
        },
        residual_f: rf.residual,
        residual_second: rs.residual,
        gamma_f: rf.gamma,
        gamma_second: rs.gamma,
        budget_residual: rs.budget,
        excluded_points,
        max_violation,
        pass: max_violation <= tol,
        iterations: None,
        worst_case_mse: sol.mse,
        sign_conventions: sign_conventions(),
    };
    Ok((report, sol))
}

/// Residuals of the least-favourable equations of the class pair at
/// `(f0, s0)` (`s0 = g0`, or `p0` for cointegrated pairs), any dimension.
/// Multipliers are estimated from the interior of the constraint sets
/// unless supplied.
#[allow(clippy::too_many_arguments)]
pub fn matrix_equation_residual(
    f0: &SpectralDensityGrid,
    s0: &SpectralDensityGrid,
    pair: &ClassPair,
    spec: &IncrementSpec,
    fnl: &FunctionalSpec,
    trunc: usize,
    multipliers: Option<&Multipliers>,
    form: EquationForm,
) -> Result<SaddleReport> {
    Ok(equations_at(
        f0,
        s0,
        pair,
        spec,
        fnl,
        trunc,
        multipliers,
        form,
        DEFAULT_SOLVER_TOL,
    )?
    .0)
}

/// Least-favourable solver settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    /// Damping of the pointwise update.
    pub damping: f64,
    /// Iteration cap.
    pub max_iter: usize,
    /// Target maximal equation residual.
    pub tol: f64,
    /// Truncation of the coefficient system.
    pub trunc: usize,
    /// Anderson acceleration depth (0 disables).
    pub anderson: usize,
}

impl SolverConfig {
    /// Defaults at truncation `trunc`.
    pub fn new(trunc: usize) -> Self {
        SolverConfig {
            damping: DEFAULT_DAMPING,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_SOLVER_TOL,
            trunc,
            anderson: DEFAULT_ANDERSON_DEPTH,
        }
    }
}

/// Anderson extrapolation of a fixed-point map from `(x_i, G(x_i))` pairs.
fn anderson_step(history: &VecDeque<(Vec<f64>, Vec<f64>)>) -> Option<Vec<f64>> {
    let n = history[0].0.len();
    let r: Vec<Vec<f64>> = history
        .iter()
        .map(|(x, gx)| gx.iter().zip(x).map(|(a, b)| a - b).collect())
        .collect();
    let cols = history.len() - 1;
    let dr = DMatrix::from_fn(n, cols, |i, j| r[j + 1][i] - r[j][i]);
    let last = DVector::from_column_slice(&r[cols]);
    let mut normal = dr.transpose() * &dr;
    let reg = 1e-12 * normal.trace().max(1e-300);
    for j in 0..cols {
        normal[(j, j)] += reg;
    }
    let gamma = normal.cholesky()?.solve(&(dr.transpose() * last));
    let mut out = history[cols].1.clone();
    for j in 0..cols {
        for (i, o) in out.iter_mut().enumerate() {
            *o -= gamma[j] * (history[j + 1].1[i] - history[j].1[i]);
        }
    }
    out.iter().all(|v| v.is_finite()).then_some(out)
}

/// Least favourable pair with its minimax solution and equation report.
#[derive(Debug, Clone)]
pub struct LeastFavorable {
    /// `f⁰`.
    pub f0: SpectralDensityGrid,
    /// `g⁰`.
    pub g0: SpectralDensityGrid,
    /// Classical solution at `(f⁰, g⁰)`, i.e. the minimax characteristic.
    pub solution: ForecastSolution,
    /// Equation residuals at the returned pair.
    pub report: SaddleReport,
}

/// Projected fixed-point iteration for scalar class pairs: the pointwise
/// equations are solved for each density with the other frozen, clipped to
/// the envelopes, and the multipliers are fixed by bisection on the
/// moment (or budget) constraint.
pub fn solve_least_favorable(
    pair: &ClassPair,
    spec: &IncrementSpec,
    fnl: &FunctionalSpec,
    cfg: &SolverConfig,
) -> Result<LeastFavorable> {
    if spec.period != 1 {
        return Err(GmiError::InvalidSpec(
            "the least-favourable solver is scalar (T = 1); use matrix_equation_residual for T > 1"
                .into(),
        ));
    }
    if pair.alpha.is_some() {
        return Err(GmiError::InvalidSpec("the solver covers noise classes; cointegrated classes are verified through matrix_equation_residual".into()));
    }
    if !(cfg.damping > 0.0 && cfg.damping <= 1.0) {
        return Err(GmiError::InvalidSpec("damping must lie in (0, 1]".into()));
    }
    let grid = pair.grid();
    let k2 = kernel_abs2_on_grid(spec, grid);
    let b2 = beta_abs2_on_grid(spec, grid);
    let tiny = 1e-12 * b2.iter().copied().fold(0.0, f64::max).max(1e-300);
    let rf = pair.f.scalar_rule(&k2)?;
    let rg = pair.second.scalar_rule(&vec![1.0; grid])?;
    let vf = ValueFunctional::new(spec, fnl, grid)?;
    let mut f = rf.initial()?;
    let mut g = rg.initial()?;
    let eta = cfg.damping;
    let mut last = f64::INFINITY;
    let mut best = f64::INFINITY;
    let mut history: VecDeque<(Vec<f64>, Vec<f64>)> = VecDeque::new();
    for it in 0..=cfg.max_iter {
        let fg = grid_from_scalar(&f, Role::F)?;
        let gg = grid_from_scalar(&g, Role::G)?;
        let (mut report, sol) = equations_at(
            &fg,
            &gg,
            pair,
            spec,
            fnl,
            cfg.trunc,
            None,
            EquationForm::Density,
            cfg.tol,
        )?;
        last = report.max_violation;
        log::debug!(
            "least-favourable iteration {it}: residual {last:e}, mse {}",
            sol.mse
        );
        if last <= cfg.tol {
            report.iterations = Some(it);
            return Ok(LeastFavorable {
                f0: fg,
                g0: gg,
                solution: sol,
                report,
            });
        }
        if it == cfg.max_iter {
            break;
        }
        if last > 4.0 * best {
            history.clear();
        }
        best = best.min(last);
        let errs = vf.error_vectors(&sol.h_over_kernel);
        let ad: Vec<f64> = errs.iter().map(|(d, _)| d[(0, 0)].norm()).collect();
        let ae: Vec<f64> = errs.iter().map(|(_, e)| e[(0, 0)].norm()).collect();
        let p: Vec<f64> = (0..grid).map(|i| f[i] + b2[i] * g[i]).collect();
        let (_, f_map) = rf.fit(|t| {
            (0..grid)
                .map(|i| {
                    rf.clamp(
                        i,
                        (1.0 - eta) * f[i] + eta * (t * ad[i] * p[i] - b2[i] * g[i]),
                    )
                })
                .collect()
        })?;
        let (_, g_map) = rg.fit(|t| {
            (0..grid)
                .map(|i| {
                    if b2[i] > tiny {
                        rg.clamp(
                            i,
                            (1.0 - eta) * g[i] + eta * (t * ae[i] * p[i] - f[i]) / b2[i],
                        )
                    } else if rg.upper[i].is_finite() {
                        // g does not enter W here: the linear weight alone decides
                        if t * ae[i] > 1.0 {
                            rg.upper[i]
                        } else {
                            rg.lower[i]
                        }
                    } else {
                        g[i]
                    }
                })
                .collect()
        })?;
        let x: Vec<f64> = f.iter().chain(&g).copied().collect();
        let gx: Vec<f64> = f_map.iter().chain(&g_map).copied().collect();
        history.push_back((x, gx.clone()));
        if history.len() > cfg.anderson + 1 {
            history.pop_front();
        }
        let next = if history.len() >= 2 {
            anderson_step(&history).unwrap_or(gx)
        } else {
            gx
        };
        f = rf.project(&next[..grid])?;
        g = rg.project(&next[grid..])?;
    }
    Err(GmiError::NonConvergence {
        iterations: cfg.max_iter,
        residual: last,
    })
}

/// Least favourable pair in `D_f0 × D_V^U` (scalar).
pub fn solve_lf_band(
    pair: &ClassPair,
    spec: &IncrementSpec,
    fnl: &FunctionalSpec,
    cfg: &SolverConfig,
) -> Result<LeastFavorable> {
    if !matches!(
        (&pair.f, &pair.second),
        (AdmissibleClass::Moment { .. }, AdmissibleClass::Band { .. })
    ) {
        return Err(GmiError::InvalidSpec(
            "solve_lf_band expects a moment class for f and a band class for g".into(),
        ));
    }
    solve_least_favorable(pair, spec, fnl, cfg)
}

/// Least favourable pair in `D_fε × D_g1δ` (scalar).
pub fn solve_lf_eps_delta(
    pair: &ClassPair,
    spec: &IncrementSpec,
    fnl: &FunctionalSpec,
    cfg: &SolverConfig,
) -> Result<LeastFavorable> {
    if !matches!(
        (&pair.f, &pair.second),
        (
            AdmissibleClass::Contaminated { .. },
            AdmissibleClass::L1Ball { .. }
        )
    ) {
        return Err(GmiError::InvalidSpec(
            "solve_lf_eps_delta expects a contamination class for f and an L1 ball for g".into(),
        ));
    }
    solve_least_favorable(pair, spec, fnl, cfg)
}

/// Minimax spectral characteristic: the classical solution at the least
/// favourable pair.
pub fn minimax_characteristic(
    f0: &SpectralDensityGrid,
    g0: &SpectralDensityGrid,
    spec: &IncrementSpec,
    fnl: &FunctionalSpec,
    n_trunc: usize,
) -> Result<ForecastSolution> {
    spectral_characteristic(f0, g0, spec, fnl, n_trunc)
}

/// Sampled saddle audit settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AuditOptions {
    /// Number of random admissible pairs.
    pub samples: usize,
    /// RNG seed.
    pub seed: u64,
    /// Relative tolerance on `Δ(h⁰; f, g) ≤ Δ(h⁰; f⁰, g⁰)`.
    pub tol: f64,
    /// Truncation of the coefficient system.
    pub trunc: usize,
    /// Also solve the classical problem at every sample.
    pub classical: bool,
}

impl AuditOptions {
    /// Defaults: 100 samples, tolerance `1e-4`, no classical solves.
    pub fn new(trunc: usize, seed: u64) -> Self {
        AuditOptions {
            samples: 100,
            seed,
            tol: DEFAULT_SADDLE_TOL,
            trunc,
            classical: false,
        }
    }
}

/// Outcome of [`verify_saddle`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SaddleAudit {
    /// Samples drawn.
    pub samples: usize,
    /// Samples with `Δ(h⁰; f, g)` above the saddle value beyond tolerance.
    pub violations: usize,
    /// `Δ(h⁰; f⁰, g⁰)`.
    pub saddle_value: f64,
    /// Largest sampled `Δ(h⁰; f, g)`.
    pub max_sampled_value: f64,
    /// Largest relative excess over the saddle value.
    pub max_relative_excess: f64,
    /// Classical MSE at `(f⁰, g⁰)` and the sampled maximum (classical mode).
    pub classical: Option<(f64, f64)>,
    /// Samples whose classical MSE exceeds the one at `(f⁰, g⁰)`.
    pub classical_violations: Option<usize>,
    /// Relative gap between `max_i Δ(h⁰; ·)` and `min_j max_i Δ(h_j; ·)`.
    pub dominance_gap: Option<f64>,
    /// No violations of any audited inequality.
    pub pass: bool,
}

/// Draws random admissible pairs (convex mixtures of the candidate pair with
/// constraint-projected trigonometric perturbations) and checks the saddle
/// inequality `Δ(h⁰; f, g) ≤ Δ(h⁰; f⁰, g⁰)` with the value functional.
pub fn verify_saddle(
    f0: &SpectralDensityGrid,
    g0: &SpectralDensityGrid,
    pair: &ClassPair,
    spec: &IncrementSpec,
    fnl: &FunctionalSpec,
    opts: &AuditOptions,
) -> Result<SaddleAudit> {
    if spec.period != 1 || pair.alpha.is_some() {
        return Err(GmiError::InvalidSpec(
            "sampling audit covers scalar noise classes".into(),
        ));
    }
    let grid = f0.grid_size();
    f0.same_grid(g0)?;
    let k2 = kernel_abs2_on_grid(spec, grid);
    let rf = pair.f.scalar_rule(&k2)?;
    let rg = pair.second.scalar_rule(&vec![1.0; grid])?;
    let sol0 = spectral_characteristic_with(f0, g0, spec, fnl, &no_check(opts.trunc))?;
    let vf = ValueFunctional::new(spec, fnl, grid)?;
    let saddle_value = vf.eval(&sol0.h_over_kernel, f0, g0);
    let fs = f0.scalar_samples();
    let gs = g0.scalar_samples();
    let pairs: Vec<(SpectralDensityGrid, SpectralDensityGrid)> = (0..opts.samples)
        .into_par_iter()
        .map(|i| -> Result<_> {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed.wrapping_add(i as u64));
            let fr = rf.sample(&mut rng, PERTURBATION_DEGREE)?;
            let gr = rg.sample(&mut rng, PERTURBATION_DEGREE)?;
            let (wf, wg): (f64, f64) = (rng.random(), rng.random());
            let f: Vec<f64> = fs
                .iter()
                .zip(&fr)
                .map(|(a, b)| (1.0 - wf) * a + wf * b)
                .collect();
            let g: Vec<f64> = gs
                .iter()
                .zip(&gr)
                .map(|(a, b)| (1.0 - wg) * a + wg * b)
                .collect();
            Ok((
                grid_from_scalar(&f, Role::F)?,
                grid_from_scalar(&g, Role::G)?,
            ))
        })
        .collect::<Result<_>>()?;
    let values: Vec<f64> = pairs
        .par_iter()
        .map(|(f, g)| vf.eval(&sol0.h_over_kernel, f, g))
        .collect();
    let scale = saddle_value.abs().max(1e-300);
    let excess: Vec<f64> = values.iter().map(|v| (v - saddle_value) / scale).collect();
    let violations = excess.iter().filter(|e| **e > opts.tol).count();
    let max_sampled_value = values.iter().copied().fold(f64::MIN, f64::max);
    let max_relative_excess = excess.iter().copied().fold(f64::MIN, f64::max);
    let (classical, classical_violations, dominance_gap) = if opts.classical {
        let sols: Vec<ForecastSolution> = pairs
            .par_iter()
            .map(|(f, g)| spectral_characteristic_with(f, g, spec, fnl, &no_check(opts.trunc)))
            .collect::<Result<_>>()?;
        let cmax = sols.iter().map(|s| s.mse).fold(f64::MIN, f64::max);
        let cviol = sols
            .iter()
            .filter(|s| s.mse > sol0.mse * (1.0 + opts.tol))
            .count();
        let worst_of = |hk: &[Vec<Complex64>]| {
            pairs
                .iter()
                .map(|(f, g)| vf.eval(hk, f, g))
                .fold(f64::MIN, f64::max)
        };
        let h0_worst = worst_of(&sol0.h_over_kernel);
        let best_other = sols
            .par_iter()
            .map(|s| worst_of(&s.h_over_kernel))
            .reduce(|| f64::MAX, f64::min);
        let gap = ((h0_worst - best_other) / scale).max(0.0);
        (Some((sol0.mse, cmax)), Some(cviol), Some(gap))
    } else {
        (None, None, None)
    };
    let pass = violations == 0
        && classical_violations.unwrap_or(0) == 0
        && dominance_gap.map(|g| g <= opts.tol).unwrap_or(true);
    Ok(SaddleAudit {
        samples: opts.samples,
        violations,
        saddle_value,
        max_sampled_value,
        max_relative_excess,
        classical,
        classical_violations,
        dominance_gap,
        pass,
    })
}

/// Grid-search oracle settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSearchOptions {
    /// Number of piecewise-constant basis functions per density.
    pub bands: usize,
    /// Truncation of the coefficient system.
    pub trunc: usize,
    /// Smallest mass transfer, relative to the free mass.
    pub min_step: f64,
    /// Sweep cap per step size.
    pub max_sweeps: usize,
}

impl GridSearchOptions {
    /// Sixteen bands, steps down to `1e-4` of the free mass.
    pub fn new(trunc: usize) -> Self {
        GridSearchOptions {
            bands: 16,
            trunc,
            min_step: 1e-4,
            max_sweeps: 20,
        }
    }
}

/// Best pair found by the oracle.
#[derive(Debug, Clone)]
pub struct GridSearchResult {
    /// Largest classical MSE found.
    pub mse: f64,
    /// Maximizing `f`.
    pub f: SpectralDensityGrid,
    /// Maximizing `g`.
    pub g: SpectralDensityGrid,
    /// Classical solves performed.
    pub evaluations: usize,
}

struct BandBasis {
    rule: ScalarRule,
    band_of: Vec<usize>,
    shape: Vec<f64>,
    mass: Vec<f64>,
    cap: Vec<f64>,
    coef: Vec<f64>,
}

impl BandBasis {
    fn new(rule: ScalarRule, bands: usize) -> Result<Self> {
        let grid = rule.lower.len();
        let band_of: Vec<usize> = (0..grid)
            .map(|m| {
                let lam = crate::spectra::grid_lambda(m, grid).abs();
                ((lam / std::f64::consts::PI * bands as f64) as usize).min(bands - 1)
            })
            .collect();
        let shape: Vec<f64> = (0..grid)
            .map(|i| {
                if rule.upper[i].is_finite() {
                    rule.upper[i] - rule.lower[i]
                } else {
                    1.0
                }
            })
            .collect();
        let mut mass = vec![0.0; bands];
        let mut cap = vec![1.0; bands];
        for i in 0..grid {
            mass[band_of[i]] += rule.weight[i] * shape[i] / grid as f64;
            if !rule.upper[i].is_finite() {
                cap[band_of[i]] = f64::INFINITY;
            }
        }
        let free = rule.target - rule.mass(&rule.lower);
        let total_cap: f64 = mass.iter().zip(&cap).map(|(m, c)| m * c).sum();
        if free > total_cap * (1.0 + 1e-12) {
            return Err(GmiError::InvalidSpec(
                "band basis cannot carry the constraint mass".into(),
            ));
        }
        // equal water level across bands
        let level_mass = |k: f64| {
            mass.iter()
                .zip(&cap)
                .map(|(m, c)| m * k.min(*c))
                .sum::<f64>()
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        while level_mass(hi) < free && hi < 1e300 {
            hi *= 2.0;
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if level_mass(mid) < free {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let coef = cap
            .iter()
            .zip(&mass)
            .map(|(c, m)| if *m > 0.0 { hi.min(*c) } else { 0.0 })
            .collect();
        Ok(BandBasis {
            rule,
            band_of,
            shape,
            mass,
            cap,
            coef,
        })
    }

    fn density(&self, coef: &[f64]) -> Vec<f64> {
        (0..self.rule.lower.len())
            .map(|i| self.rule.lower[i] + coef[self.band_of[i]] * self.shape[i])
            .collect()
    }

    fn free_mass(&self) -> f64 {
        self.rule.target - self.rule.mass(&self.rule.lower)
    }
}

/// Coarse maximizer of the classical MSE over densities that are piecewise
/// constant multiples of the class envelopes on `bands` frequency bands
/// (symmetric in `λ`), found by pairwise mass transfers with step halving.
pub fn grid_search_worst_case(
    pair: &ClassPair,
    spec: &IncrementSpec,
    fnl: &FunctionalSpec,
    opts: &GridSearchOptions,
) -> Result<GridSearchResult> {
    if spec.period != 1 || pair.alpha.is_some() {
        return Err(GmiError::InvalidSpec(
            "grid search covers scalar noise classes".into(),
        ));
    }
    let grid = pair.grid();
    let k2 = kernel_abs2_on_grid(spec, grid);
    let mut bases = [
        BandBasis::new(pair.f.scalar_rule(&k2)?, opts.bands)?,
        BandBasis::new(pair.second.scalar_rule(&vec![1.0; grid])?, opts.bands)?,
    ];
    let mut evaluations = 0usize;
    let mut eval = |cf: &[f64], cg: &[f64], bases: &[BandBasis; 2]| -> f64 {
        evaluations += 1;
        let f = grid_from_scalar(&bases[0].density(cf), Role::F);
        let g = grid_from_scalar(&bases[1].density(cg), Role::G);
        match (f, g) {
            (Ok(f), Ok(g)) => {
                spectral_characteristic_with(&f, &g, spec, fnl, &no_check(opts.trunc))
                    .map(|s| s.mse)
                    .unwrap_or(f64::MIN)
            }
            _ => f64::MIN,
        }
    };
    let mut best = eval(&bases[0].coef.clone(), &bases[1].coef.clone(), &bases);
    let free = [bases[0].free_mass(), bases[1].free_mass()];
    let mut step = [free[0] / 4.0, free[1] / 4.0];
    loop {
        let active: Vec<usize> = (0..2)
            .filter(|&w| free[w] > 0.0 && step[w] >= opts.min_step * free[w])
            .collect();
        if active.is_empty() {
            break;
        }
        for _ in 0..opts.max_sweeps {
            let mut improved = false;
            for &w in &active {
                let nb = opts.bands;
                for i in 0..nb {
                    for j in 0..nb {
                        if i == j || bases[w].mass[i] <= 0.0 || bases[w].mass[j] <= 0.0 {
                            continue;
                        }
                        let s = step[w];
                        let ci = bases[w].coef[i] + s / bases[w].mass[i];
                        let cj = bases[w].coef[j] - s / bases[w].mass[j];
                        if cj < 0.0 || ci > bases[w].cap[i] {
                            continue;
                        }
                        let mut trial = bases[w].coef.clone();
                        trial[i] = ci;
                        trial[j] = cj;
                        let v = if w == 0 {
                            eval(&trial, &bases[1].coef.clone(), &bases)
                        } else {
                            eval(&bases[0].coef.clone(), &trial, &bases)
                        };
                        if v > best * (1.0 + 1e-12) {
                            best = v;
                            bases[w].coef = trial;
                            improved = true;
                        }
                    }
                }
            }
            if !improved {
                break;
            }
        }
        for w in 0..2 {
            step[w] *= 0.5;
        }
    }
    let f = grid_from_scalar(&bases[0].density(&bases[0].coef), Role::F)?;
    let g = grid_from_scalar(&bases[1].density(&bases[1].coef), Role::G)?;
    Ok(GridSearchResult {
        mse: best,
        f,
        g,
        evaluations,
    })
}
