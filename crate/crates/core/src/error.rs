//! Error type shared by all modules.

use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmiError {
    /// Malformed increment specification or functional.
    #[error("invalid specification: {0}")]
    InvalidSpec(String),
    /// Fractional orders outside the stationarity region.
    #[error(
        "stationarity gate violated at frequency {nu}: aggregated order {order} not in (-1/2, 1/2)"
    )]
    StationarityGate { nu: f64, order: f64 },
    /// Grid size or shape problems.
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    /// Two grids that must match do not.
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    /// Quadrature lag range too wide for the grid.
    #[error("aliasing guard violated: grid {grid} too small for lag span {span}")]
    Aliasing { grid: usize, span: i64 },
    /// A matrix that must be invertible is (numerically) singular.
    #[error("singular matrix ({context}) at lambda = {lambda}")]
    Singular { context: String, lambda: f64 },
    /// A density failed the Hermitian positive semidefinite check.
    #[error("density not Hermitian PSD: {0}")]
    NotPsd(String),
    /// Density has rank deficiency outside the designed zeros.
    #[error("rank-deficient density at lambda = {lambda}")]
    RankDeficient { lambda: f64 },
    /// Linear system too ill-conditioned.
    #[error("ill-conditioned system: condition estimate {cond:e}")]
    IllConditioned { cond: f64 },
    /// Iterative method did not converge.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NonConvergence { iterations: usize, residual: f64 },
    /// Minimality (finite prediction error) condition fails.
    #[error("minimality condition fails: {0}")]
    Minimality(String),
    /// Integrand or filter unbounded.
    #[error("unbounded quantity: {0}")]
    Unbounded(String),
    /// Not enough observations.
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    /// Parsing of configuration or model files.
    #[error("parse error: {0}")]
    Parse(String),
}

impl GmiError {
    /// True for errors caused by malformed input rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            GmiError::InvalidSpec(_)
                | GmiError::StationarityGate { .. }
                | GmiError::InvalidGrid(_)
                | GmiError::GridMismatch(_)
                | GmiError::Aliasing { .. }
                | GmiError::Parse(_)
        )
    }
}

/// Result alias.
pub type Result<T> = std::result::Result<T, GmiError>;
