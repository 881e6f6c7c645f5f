//! CLI error categories and exit codes.

use gmi_core::GmiError;
use thiserror::Error;

/// Error of a CLI run.
#[derive(Debug, Error)]
pub enum CliError {
    /// Unreadable or invalid configuration.
    #[error("configuration error: {0}")]
    Config(String),
    /// Unreadable, malformed or insufficient data, or failed writes.
    #[error("data error: {0}")]
    Data(String),
    /// Numerical failure inside the library.
    #[error("numerical error: {0}")]
    Numeric(GmiError),
}

impl CliError {
    /// Categorizes a library error.
    pub fn from_core(e: GmiError) -> Self {
        if e.is_config() {
            CliError::Config(e.to_string())
        } else if matches!(e, GmiError::InsufficientData(_)) {
            CliError::Data(e.to_string())
        } else {
            CliError::Numeric(e)
        }
    }

    /// Process exit status.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl From<GmiError> for CliError {
    fn from(e: GmiError) -> Self {
        CliError::from_core(e)
    }
}
