//! Command pipelines. Each returns the files it produces; nothing is written
//! until the whole pipeline has succeeded.

use std::io::Write;
use std::path::Path;

use gmi_core::cointegrate::CointegrationSpec;
use gmi_core::factorize::{canonical_factorize, invert_factor};
use gmi_core::forecast::{
    apply_forecast, spectral_characteristic_with, ForecastOptions, ForecastSolution, FunctionalSpec,
};
use gmi_core::minimax::{
    solve_least_favorable, verify_saddle, AdmissibleClass, Aggregation, AuditOptions, ClassPair,
    Level, SolverConfig, DEFAULT_SADDLE_TOL,
};
use gmi_core::simulate::{add_noise, generate_gm_sequence, SimulationConfig};
use gmi_core::spectra::{
    eval_density, f_to_increment, grid_lambda, increment_to_f, increment_weighted,
    kernel_abs2_on_grid, noisy_density, Role, SpectralDensityGrid,
};
use serde_json::json;

use crate::config::{FClassConfig, FactorTarget, GClassConfig, Resolved};
use crate::error::CliError;

/// Offset between the signal and noise seeds of `simulate`.
pub const NOISE_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

/// One output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    /// File name inside the output directory.
    pub name: String,
    /// Contents.
    pub bytes: Vec<u8>,
}

impl Artifact {
    fn json(name: &str, v: &serde_json::Value) -> Self {
        let mut bytes = serde_json::to_vec_pretty(v).expect("JSON value serializes");
        bytes.push(b'\n');
        Artifact {
            name: name.into(),
            bytes,
        }
    }

    fn csv(name: &str, header: &[String], rows: &[Vec<String>]) -> Result<Self, CliError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)
            .map_err(|e| CliError::Data(e.to_string()))?;
        for r in rows {
            w.write_record(r)
                .map_err(|e| CliError::Data(e.to_string()))?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
        Ok(Artifact {
            name: name.into(),
            bytes,
        })
    }
}

/// Writes artifacts into `dir`, each through a temporary file and a rename.
pub fn write_artifacts(dir: &Path, artifacts: &[Artifact]) -> Result<(), CliError> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Data(format!("cannot create {}: {e}", dir.display())))?;
    for a in artifacts {
        let target = dir.join(&a.name);
        let tmp = dir.join(format!(".{}.tmp", a.name));
        let write = || -> std::io::Result<()> {
            let mut f = std::fs::File::create(&tmp)?;
            f.write_all(&a.bytes)?;
            f.sync_all()?;
            std::fs::rename(&tmp, &target)
        };
        if let Err(e) = write() {
            let _ = std::fs::remove_file(&tmp);
            return Err(CliError::Data(format!(
                "cannot write {}: {e}",
                target.display()
            )));
        }
    }
    Ok(())
}

fn series_header(t: usize) -> Vec<String> {
    std::iter::once("t".to_string())
        .chain((1..=t).map(|p| format!("component_{p}")))
        .collect()
}

fn series_rows(x: &[Vec<f64>]) -> Vec<Vec<String>> {
    x.iter()
        .enumerate()
        .map(|(i, v)| {
            std::iter::once(i.to_string())
                .chain(v.iter().map(|z| z.to_string()))
                .collect()
        })
        .collect()
}

/// Reads a series CSV with header `t,component_1..component_T`.
pub fn read_series(path: &Path, t: usize) -> Result<Vec<Vec<f64>>, CliError> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    let header: Vec<String> = r
        .headers()
        .map_err(|e| CliError::Data(e.to_string()))?
        .iter()
        .map(|s| s.trim().to_string())
        .collect();
    if header != series_header(t) {
        return Err(CliError::Data(format!(
            "{}: expected header {:?}, got {header:?}",
            path.display(),
            series_header(t)
        )));
    }
    let mut out = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let row: Vec<f64> = rec
            .iter()
            .skip(1)
            .map(|s| s.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Data(format!("{}: row {}: {e}", path.display(), i + 1)))?;
        if row.len() != t || row.iter().any(|v| !v.is_finite()) {
            return Err(CliError::Data(format!(
                "{}: row {} must hold {t} finite values",
                path.display(),
                i + 1
            )));
        }
        out.push(row);
    }
    Ok(out)
}

fn lambda_grid(grid: usize) -> Vec<f64> {
    (0..grid).map(|m| grid_lambda(m, grid)).collect()
}

fn h_table(sol: &ForecastSolution) -> Result<Artifact, CliError> {
    let header: Vec<String> = std::iter::once("lambda".to_string())
        .chain((1..=sol.dim).map(|p| format!("abs_h_{p}")))
        .collect();
    let rows: Vec<Vec<String>> = sol
        .h_samples
        .iter()
        .enumerate()
        .map(|(m, h)| {
            std::iter::once(grid_lambda(m, sol.grid).to_string())
                .chain(h.iter().map(|z| z.norm().to_string()))
                .collect()
        })
        .collect();
    Artifact::csv("h.csv", &header, &rows)
}

/// `simulate`: series CSV (observed sequence), signal CSV when noise is
/// configured, and JSON metadata.
pub fn cmd_simulate(r: &Resolved) -> Result<Vec<Artifact>, CliError> {
    r.check_command("simulate")?;
    let sec = r
        .cfg
        .simulate
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [simulate] section".into()))?;
    let mut sc = SimulationConfig::new(r.cfg.increment.clone(), r.f_model()?, sec.length, r.seed);
    sc.burn_in = sec.burn_in;
    sc.grid = r.grid;
    if let Some(k) = sec.factor_len {
        sc.factor_len = k;
    }
    if let Some(w) = sec.fractional_window {
        sc.fractional_window = w;
    }
    let path = generate_gm_sequence(&sc)?;
    let t = r.period();
    let g = r.g_model()?;
    let observed = match &g {
        Some(g) => add_noise(&path.xi, g, r.seed.wrapping_add(NOISE_SEED_OFFSET))?,
        None => path.xi.clone(),
    };
    let mut out = vec![Artifact::csv(
        "series.csv",
        &series_header(t),
        &series_rows(&observed),
    )?];
    if g.is_some() {
        out.push(Artifact::csv(
            "signal.csv",
            &series_header(t),
            &series_rows(&path.xi),
        )?);
    }
    out.push(Artifact::json(
        "metadata.json",
        &json!({
            "command": "simulate",
            "seed": r.seed,
            "length": sec.length,
            "period": t,
            "increment": r.cfg.increment,
            "noise": g.is_some(),
            "grid": r.grid,
            "factor_len": sc.factor_len,
            "files": out.iter().map(|a| a.name.clone()).collect::<Vec<_>>(),
        }),
    ));
    Ok(out)
}

/// Library densities: `f` from the configured increment density, `g` as
/// configured (zero when absent). With a cointegrating constant the second
/// density is the increment density of the observations and is converted too.
fn f_and_g(r: &Resolved) -> Result<(SpectralDensityGrid, SpectralDensityGrid), CliError> {
    let f = increment_to_f(&eval_density(&r.f_model()?, r.grid)?, &r.cfg.increment)?;
    let coint = r.cfg.forecast.as_ref().and_then(|s| s.alpha).is_some();
    let g = match r.g_model()? {
        Some(m) if coint => increment_to_f(&eval_density(&m, r.grid)?, &r.cfg.increment)?,
        Some(m) => eval_density(&m, r.grid)?,
        None => SpectralDensityGrid::zeros(r.grid, r.period(), Role::G)?,
    };
    Ok((f, g))
}

fn require_integer(r: &Resolved) -> Result<(), CliError> {
    if !r.cfg.increment.is_integer() {
        return Err(CliError::Config(
            "forecasting requires integer increment orders".into(),
        ));
    }
    Ok(())
}

/// Forecast solution of the configured problem (library call used by
/// `forecast`).
pub fn forecast_solution(r: &Resolved) -> Result<(ForecastSolution, FunctionalSpec), CliError> {
    require_integer(r)?;
    let fnl = r.functional()?;
    let (f, g) = f_and_g(r)?;
    let sec = r.cfg.forecast.as_ref();
    let opts = ForecastOptions {
        trunc: r.trunc,
        check_truncation: true,
        filter_lags: sec.and_then(|s| s.filter_lags),
    };
    let sol = match sec.and_then(|s| s.alpha) {
        None => spectral_characteristic_with(&f, &g, &r.cfg.increment, &fnl, &opts)?,
        Some(alpha) => {
            let cs = CointegrationSpec::new(alpha, f, g)?;
            let rem = cs.remainder_density(&r.cfg.increment)?;
            let fa = cs.f.scaled(alpha * alpha);
            spectral_characteristic_with(&fa, &rem, &r.cfg.increment, &fnl, &opts)?
                .scaled(1.0 / alpha)
        }
    };
    Ok((sol, fnl))
}

/// `forecast`: JSON solution, rolling point forecasts over the observation
/// file and the plot table `|h(λ)|`.
pub fn cmd_forecast(r: &Resolved) -> Result<Vec<Artifact>, CliError> {
    r.check_command("forecast")?;
    let sec = r
        .cfg
        .forecast
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [forecast] section".into()))?;
    let obs = read_series(&r.base.join(&sec.observations), r.period())?;
    let (sol, fnl) = forecast_solution(r)?;
    let need = sol.filter_weights.len() + r.cfg.increment.n_gamma();
    if obs.len() < need {
        return Err(CliError::Data(format!(
            "need at least {need} observations, got {}",
            obs.len()
        )));
    }
    let mut rows = Vec::new();
    for origin in need..=obs.len() {
        let est = apply_forecast(&obs[..origin], &sol, &r.cfg.increment)?;
        let actual = (origin + fnl.n() < obs.len()).then(|| {
            fnl.weights
                .entries
                .iter()
                .enumerate()
                .map(|(k, a)| {
                    a.iter()
                        .zip(&obs[origin + k])
                        .map(|(w, x)| w.re * x)
                        .sum::<f64>()
                })
                .sum::<f64>()
        });
        rows.push(vec![
            origin.to_string(),
            est.re.to_string(),
            sol.mse.to_string(),
            actual.map(|a| a.to_string()).unwrap_or_default(),
        ]);
    }
    let header: Vec<String> = ["origin", "estimate", "mse", "observed"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    Ok(vec![
        Artifact::json("solution.json", &sol.to_json()),
        Artifact::csv("forecasts.csv", &header, &rows)?,
        h_table(&sol)?,
    ])
}

/// Class pair of the `[robust]` section (scalar, trace aggregation).
pub fn robust_pair(
    r: &Resolved,
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
) -> Result<ClassPair, CliError> {
    let sec = r
        .cfg
        .robust
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [robust] section".into()))?;
    let f_class = match &sec.f_class {
        FClassConfig::Moment { level } => AdmissibleClass::Moment {
            agg: Aggregation::Trace,
            level: Level::Scalar(*level),
        },
        FClassConfig::Contaminated { eps, level } => {
            let k2 = kernel_abs2_on_grid(&r.cfg.increment, r.grid);
            let own = f
                .scalar_samples()
                .iter()
                .zip(&k2)
                .map(|(a, b)| a * b)
                .sum::<f64>()
                / r.grid as f64;
            AdmissibleClass::Contaminated {
                agg: Aggregation::Trace,
                eps: *eps,
                anchor: f.clone(),
                level: Level::Scalar(level.unwrap_or(own)),
            }
        }
    };
    let g_class = match &sec.g_class {
        GClassConfig::Band {
            lower,
            upper,
            level,
        } => {
            let lo = eval_density(&lower.load(&r.base)?, r.grid)?;
            let hi = eval_density(&upper.load(&r.base)?, r.grid)?;
            AdmissibleClass::Band {
                agg: Aggregation::Trace,
                lower: lo,
                upper: hi,
                level: Level::Scalar(*level),
            }
        }
        GClassConfig::L1ball { radius } => AdmissibleClass::L1Ball {
            agg: Aggregation::Trace,
            anchor: g.clone(),
            radius: Level::Scalar(*radius),
        },
    };
    Ok(ClassPair::new(f_class, g_class, None, r.period())?)
}

/// `robust`: least favourable densities, equation report, saddle audit and
/// the minimax characteristic.
pub fn cmd_robust(r: &Resolved) -> Result<Vec<Artifact>, CliError> {
    r.check_command("robust")?;
    require_integer(r)?;
    if r.period() != 1 {
        return Err(CliError::Config(
            "robust mode solves scalar (T = 1) problems".into(),
        ));
    }
    let fnl = r.functional()?;
    let (f, g) = f_and_g(r)?;
    let pair = robust_pair(r, &f, &g)?;
    let lf = solve_least_favorable(&pair, &r.cfg.increment, &fnl, &SolverConfig::new(r.trunc))?;
    let samples = r.cfg.robust.as_ref().map(|s| s.samples).unwrap_or(0);
    let audit = if samples > 0 {
        let opts = AuditOptions {
            samples,
            seed: r.seed,
            tol: DEFAULT_SADDLE_TOL,
            trunc: r.trunc,
            classical: false,
        };
        Some(verify_saddle(
            &lf.f0,
            &lf.g0,
            &pair,
            &r.cfg.increment,
            &fnl,
            &opts,
        )?)
    } else {
        None
    };
    let f0 = lf.f0.scalar_samples();
    let g0 = lf.g0.scalar_samples();
    let lambda = lambda_grid(r.grid);
    let doc = json!({
        "variant": pair.label(),
        "worst_case_mse": lf.solution.mse,
        "report": lf.report.to_json(),
        "audit": audit,
        "lambda": lambda,
        "f0": f0,
        "g0": g0,
        "h0": lf.solution.to_json(),
    });
    let header: Vec<String> = ["lambda", "f0", "g0", "abs_h"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = (0..r.grid)
        .map(|m| {
            vec![
                lambda[m].to_string(),
                f0[m].to_string(),
                g0[m].to_string(),
                lf.solution.h_samples[m][0].norm().to_string(),
            ]
        })
        .collect();
    Ok(vec![
        Artifact::json("robust.json", &doc),
        Artifact::csv("least_favorable.csv", &header, &rows)?,
    ])
}

/// `factorize`: canonical factor, its inverse and residuals.
pub fn cmd_factorize(r: &Resolved) -> Result<Vec<Artifact>, CliError> {
    r.check_command("factorize")?;
    let sec = r
        .cfg
        .factorize
        .as_ref()
        .ok_or_else(|| CliError::Config("missing [factorize] section".into()))?;
    let (f, g) = f_and_g(r)?;
    let (name, target) = match sec.target {
        FactorTarget::F => ("f", f_to_increment(&f, &r.cfg.increment)),
        FactorTarget::G => ("g", g),
        FactorTarget::P => (
            "p",
            increment_weighted(&noisy_density(&f, &g, &r.cfg.increment)?, &r.cfg.increment),
        ),
    };
    let theta = canonical_factorize(&target, sec.length)?;
    let psi = invert_factor(&theta, sec.length)?;
    let doc = json!({
        "target": name,
        "length": sec.length,
        "grid": r.grid,
        "factor": theta.to_json(),
        "inverse": psi.to_json(),
    });
    Ok(vec![Artifact::json("factor.json", &doc)])
}
