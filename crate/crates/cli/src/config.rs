//! TOML run configuration.

use std::path::{Path, PathBuf};

use gmi_core::forecast::FunctionalSpec;
use gmi_core::increments::IncrementSpec;
use gmi_core::spectra::{DensityModel, DensityToml};
use serde::Deserialize;

use crate::error::CliError;

/// Default quadrature grid of the CLI.
pub const DEFAULT_CLI_GRID: usize = 1024;
/// Default truncation of the coefficient system.
pub const DEFAULT_CLI_TRUNC: usize = 32;
/// Upper guard on the grid size.
pub const MAX_GRID: usize = 1 << 20;
/// Upper guard on the truncation.
pub const MAX_TRUNC: usize = 2048;

/// Inline density table or a reference to a TOML file with a `[density]` table.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum DensityRef {
    /// `{ file = "path.toml" }`, relative to the configuration file.
    File {
        /// Path of the density file.
        file: PathBuf,
    },
    /// Inline `kind`, `T`, `num_coeffs`, `den_coeffs`.
    Inline(DensityToml),
}

impl DensityRef {
    /// Loads the model.
    pub fn load(&self, base: &Path) -> Result<DensityModel, CliError> {
        match self {
            DensityRef::Inline(t) => t.to_model().map_err(CliError::from_core),
            DensityRef::File { file } => {
                let path = base.join(file);
                let text = std::fs::read_to_string(&path).map_err(|e| {
                    CliError::Config(format!("cannot read density file {}: {e}", path.display()))
                })?;
                DensityModel::from_toml_str(&text)
                    .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
            }
        }
    }
}

/// Functional to be estimated.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FunctionalConfig {
    /// `ξ_p(n)`, `p` one-based.
    Single {
        /// Time index.
        n: usize,
        /// Component.
        p: usize,
    },
    /// Weights `a(0..=N)`, one row of `T` reals per time index.
    Finite {
        /// Weight rows.
        weights: Vec<Vec<f64>>,
    },
    /// `a(k) = rate^k a0`, truncated at tail bound `tol`.
    Geometric {
        /// Leading weight.
        a0: Vec<f64>,
        /// Decay rate.
        rate: f64,
        /// Tail tolerance.
        tol: f64,
    },
}

impl FunctionalConfig {
    /// Builds the functional for dimension `t`.
    pub fn build(&self, t: usize) -> Result<FunctionalSpec, CliError> {
        let fnl = match self {
            FunctionalConfig::Single { n, p } => FunctionalSpec::single(*n, *p, t),
            FunctionalConfig::Finite { weights } => FunctionalSpec::from_real(weights),
            FunctionalConfig::Geometric { a0, rate, tol } => {
                FunctionalSpec::geometric(a0, *rate, *tol)
            }
        }
        .map_err(CliError::from_core)?;
        if fnl.dim() != t {
            return Err(CliError::Config(format!(
                "functional dimension {} differs from the period {t}",
                fnl.dim()
            )));
        }
        Ok(fnl)
    }
}

/// `[simulate]` section.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateSection {
    /// Retained time points (vectors of length `T`).
    pub length: usize,
    /// Burn-in; default ten filter windows.
    pub burn_in: Option<usize>,
    /// Factor length of the innovation filters.
    pub factor_len: Option<usize>,
    /// Window of the truncated fractional filter.
    pub fractional_window: Option<usize>,
}

/// `[forecast]` section.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastSection {
    /// Observation CSV (header `t,component_1..component_T`), relative to the
    /// configuration file.
    pub observations: PathBuf,
    /// Number of filter lags `s(−1..=−k)`; default `2(N+1)`.
    pub filter_lags: Option<usize>,
    /// Cointegrating constant: `g` then holds the increment density of the
    /// observed sequence instead of a noise density.
    pub alpha: Option<f64>,
}

/// Class of `f` in robust mode.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum FClassConfig {
    /// Mean of the increment density equals `level`.
    Moment {
        /// Moment level.
        level: f64,
    },
    /// `f ≥ (1 − eps) f₁` with `f₁` the configured `f`, moment `level`.
    Contaminated {
        /// Contamination level.
        eps: f64,
        /// Moment level; default the moment of `f₁`.
        level: Option<f64>,
    },
}

/// Class of `g` in robust mode.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum GClassConfig {
    /// `lower ≤ g ≤ upper`, `mean(g) = level`.
    Band {
        /// Lower envelope.
        lower: DensityRef,
        /// Upper envelope.
        upper: DensityRef,
        /// Mass level.
        level: f64,
    },
    /// `mean|g − g₁| ≤ radius` with `g₁` the configured `g`.
    L1ball {
        /// Radius.
        radius: f64,
    },
}

/// `[robust]` section.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobustSection {
    /// Class of `f`.
    pub f_class: FClassConfig,
    /// Class of `g`.
    pub g_class: GClassConfig,
    /// Admissible pairs sampled by the saddle audit (0 skips it).
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_samples() -> usize {
    100
}

/// Density targeted by `factorize`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FactorTarget {
    /// Increment density of the target sequence.
    F,
    /// Noise density.
    G,
    /// Increment density of the observed sequence.
    P,
}

/// `[factorize]` section.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorizeSection {
    /// Density to factor.
    pub target: FactorTarget,
    /// Factor length `K`.
    pub length: usize,
}

/// Full run configuration.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Optional command name; must match the invoked subcommand.
    pub command: Option<String>,
    /// RNG seed.
    pub seed: Option<u64>,
    /// Quadrature grid size.
    pub grid: Option<usize>,
    /// Truncation `N`.
    pub trunc: Option<usize>,
    /// Increment structure and period.
    pub increment: IncrementSpec,
    /// Density of the increments of the target sequence.
    pub f: DensityRef,
    /// Density of the stationary noise (zero when absent).
    pub g: Option<DensityRef>,
    /// Functional (default `ξ_1(0)`).
    pub functional: Option<FunctionalConfig>,
    /// Simulation settings.
    pub simulate: Option<SimulateSection>,
    /// Forecast settings.
    pub forecast: Option<ForecastSection>,
    /// Robust settings.
    pub robust: Option<RobustSection>,
    /// Factorization settings.
    pub factorize: Option<FactorizeSection>,
}

/// Command-line overrides.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    /// `--seed`.
    pub seed: Option<u64>,
    /// `--grid`.
    pub grid: Option<usize>,
    /// `--trunc`.
    pub trunc: Option<usize>,
}

/// Configuration with overrides applied and the directory for relative paths.
#[derive(Debug, Clone, PartialEq)]
pub struct Resolved {
    /// Parsed configuration.
    pub cfg: RunConfig,
    /// Directory of the configuration file.
    pub base: PathBuf,
    /// Effective seed.
    pub seed: u64,
    /// Effective grid.
    pub grid: usize,
    /// Effective truncation.
    pub trunc: usize,
}

impl Resolved {
    /// Parses `text`, applies overrides and checks guards.
    pub fn from_str(text: &str, base: &Path, ov: Overrides) -> Result<Self, CliError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let seed = ov.seed.or(cfg.seed).unwrap_or(0);
        let grid = ov.grid.or(cfg.grid).unwrap_or(DEFAULT_CLI_GRID);
        let trunc = ov.trunc.or(cfg.trunc).unwrap_or(DEFAULT_CLI_TRUNC);
        if !(8..=MAX_GRID).contains(&grid) || !grid.is_power_of_two() {
            return Err(CliError::Config(format!(
                "grid {grid} must be a power of two in 8..={MAX_GRID}"
            )));
        }
        if trunc == 0 || trunc > MAX_TRUNC {
            return Err(CliError::Config(format!(
                "trunc {trunc} must lie in 1..={MAX_TRUNC}"
            )));
        }
        cfg.increment.validate().map_err(CliError::from_core)?;
        Ok(Resolved {
            cfg,
            base: base.to_path_buf(),
            seed,
            grid,
            trunc,
        })
    }

    /// Reads and resolves a configuration file.
    pub fn load(path: &Path, ov: Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, &base, ov)
    }

    /// Period `T`.
    pub fn period(&self) -> usize {
        self.cfg.increment.period
    }

    /// `f` model with its dimension checked.
    pub fn f_model(&self) -> Result<DensityModel, CliError> {
        let m = self.cfg.f.load(&self.base)?;
        self.check_dim(&m, "f")?;
        Ok(m)
    }

    /// `g` model, if configured.
    pub fn g_model(&self) -> Result<Option<DensityModel>, CliError> {
        match &self.cfg.g {
            None => Ok(None),
            Some(r) => {
                let m = r.load(&self.base)?;
                self.check_dim(&m, "g")?;
                Ok(Some(m))
            }
        }
    }

    fn check_dim(&self, m: &DensityModel, name: &str) -> Result<(), CliError> {
        if m.dim() != self.period() {
            return Err(CliError::Config(format!(
                "density {name} has dimension {} but the period is {}",
                m.dim(),
                self.period()
            )));
        }
        Ok(())
    }

    /// Functional (default `ξ_1(0)`).
    pub fn functional(&self) -> Result<FunctionalSpec, CliError> {
        self.cfg
            .functional
            .clone()
            .unwrap_or(FunctionalConfig::Single { n: 0, p: 1 })
            .build(self.period())
    }

    /// Errors unless the configured command (if any) equals `name`.
    pub fn check_command(&self, name: &str) -> Result<(), CliError> {
        match &self.cfg.command {
            Some(c) if c != name => Err(CliError::Config(format!(
                "configuration is for '{c}', not '{name}'"
            ))),
            _ => Ok(()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
seed = 4
grid = 512
[increment]
period = 1
patterns = [{ mu = 1, s = 1, r_int = 1 }]
[f]
kind = "constant"
T = 1
num_coeffs = [[[1.0, 0.0]]]
"#;

    #[test]
    fn overrides_take_precedence() {
        let r = Resolved::from_str(
            BASE,
            Path::new("."),
            Overrides {
                seed: Some(9),
                grid: None,
                trunc: Some(12),
            },
        )
        .unwrap();
        assert_eq!((r.seed, r.grid, r.trunc), (9, 512, 12));
        let r = Resolved::from_str(BASE, Path::new("."), Overrides::default()).unwrap();
        assert_eq!((r.seed, r.grid, r.trunc), (4, 512, DEFAULT_CLI_TRUNC));
    }

    #[test]
    fn guards_reject_bad_sizes() {
        for ov in [
            Overrides {
                grid: Some(100),
                ..Default::default()
            },
            Overrides {
                grid: Some(4),
                ..Default::default()
            },
            Overrides {
                trunc: Some(0),
                ..Default::default()
            },
            Overrides {
                trunc: Some(MAX_TRUNC + 1),
                ..Default::default()
            },
        ] {
            assert!(matches!(
                Resolved::from_str(BASE, Path::new("."), ov),
                Err(CliError::Config(_))
            ));
        }
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("bogus = 1\n{BASE}");
        assert!(matches!(
            Resolved::from_str(&text, Path::new("."), Overrides::default()),
            Err(CliError::Config(_))
        ));
    }

    #[test]
    fn default_functional_and_dimension_check() {
        let r = Resolved::from_str(BASE, Path::new("."), Overrides::default()).unwrap();
        let fnl = r.functional().unwrap();
        assert_eq!((fnl.dim(), fnl.n()), (1, 0));
        let text = format!("{BASE}[functional]\nkind = \"finite\"\nweights = [[1.0, 0.0]]\n");
        let r = Resolved::from_str(&text, Path::new("."), Overrides::default()).unwrap();
        assert!(matches!(r.functional(), Err(CliError::Config(_))));
    }

    #[test]
    fn command_name_must_match() {
        let text = format!("command = \"robust\"\n{BASE}");
        let r = Resolved::from_str(&text, Path::new("."), Overrides::default()).unwrap();
        assert!(r.check_command("robust").is_ok());
        assert!(matches!(
            r.check_command("forecast"),
            Err(CliError::Config(_))
        ));
    }
}
