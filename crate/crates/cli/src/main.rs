use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gmi_cli::{run, Command, Overrides};

#[derive(Parser)]
#[command(
    name = "gmi",
    version,
    about = "Forecasting of sequences with periodically stationary seasonal increments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate a sequence (series CSV + metadata JSON).
    Simulate(Common),
    /// Optimal forecast from an observation CSV.
    Forecast(Common),
    /// Least favourable densities and minimax forecast.
    Robust(Common),
    /// Canonical factorization of a configured density.
    Factorize(Common),
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// RNG seed (overrides the configuration).
    #[arg(long)]
    seed: Option<u64>,
    /// Quadrature grid size (overrides the configuration).
    #[arg(long)]
    grid: Option<usize>,
    /// Truncation of the coefficient system (overrides the configuration).
    #[arg(long)]
    trunc: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GMI_LOG", "warn")).init();
    let cli = Cli::parse();
    let (cmd, c) = match cli.command {
        Cmd::Simulate(c) => (Command::Simulate, c),
        Cmd::Forecast(c) => (Command::Forecast, c),
        Cmd::Robust(c) => (Command::Robust, c),
        Cmd::Factorize(c) => (Command::Factorize, c),
    };
    let ov = Overrides {
        seed: c.seed,
        grid: c.grid,
        trunc: c.trunc,
    };
    match run(cmd, &c.config, &c.out, ov) {
        Ok(files) => {
            for f in files {
                log::info!("wrote {}", c.out.join(f).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("gmi: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
