//! Batch front end of `gmi-core`: TOML configuration, CSV data, JSON results.

pub mod commands;
pub mod config;
pub mod error;

use std::path::Path;

pub use commands::{
    cmd_factorize, cmd_forecast, cmd_robust, cmd_simulate, write_artifacts, Artifact,
};
pub use config::{Overrides, Resolved, RunConfig};
pub use error::CliError;

/// Subcommand names.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    /// Synthetic sequence.
    Simulate,
    /// Classical forecast.
    Forecast,
    /// Minimax analysis.
    Robust,
    /// Spectral factorization.
    Factorize,
}

/// Loads the configuration, runs the command and writes its outputs.
pub fn run(
    cmd: Command,
    config: &Path,
    out: &Path,
    ov: Overrides,
) -> Result<Vec<String>, CliError> {
    let r = Resolved::load(config, ov)?;
    log::info!(
        "running {cmd:?} with grid {} trunc {} seed {}",
        r.grid,
        r.trunc,
        r.seed
    );
    let artifacts = match cmd {
        Command::Simulate => cmd_simulate(&r)?,
        Command::Forecast => cmd_forecast(&r)?,
        Command::Robust => cmd_robust(&r)?,
        Command::Factorize => cmd_factorize(&r)?,
    };
    write_artifacts(out, &artifacts)?;
    Ok(artifacts.into_iter().map(|a| a.name).collect())
}
