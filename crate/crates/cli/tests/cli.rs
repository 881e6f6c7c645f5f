use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use gmi_cli::commands::{cmd_forecast, forecast_solution};
use gmi_cli::{Overrides, Resolved};
use serde_json::Value;

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests")
        .join("golden")
        .join(name)
}

fn gmi(cmd: &str, config: &Path, out: &Path, extra: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gmi"))
        .arg(cmd)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn run_ok(cmd: &str, config: &Path, out: &Path) {
    let o = gmi(cmd, config, out, &[]);
    assert!(
        o.status.success(),
        "{cmd} failed: {}",
        String::from_utf8_lossy(&o.stderr)
    );
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

fn assert_deterministic(cmd: &str, config: &str) {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = configs().join(config);
    run_ok(cmd, &cfg, a.path());
    run_ok(cmd, &cfg, b.path());
    let fa = files(a.path());
    assert!(!fa.is_empty());
    assert!(fa.iter().all(|(n, _)| !n.ends_with(".tmp")));
    assert_eq!(fa, files(b.path()), "{cmd} {config}");
}

fn assert_json_close(a: &Value, b: &Value, path: &str) {
    match (a, b) {
        (Value::Number(x), Value::Number(y)) => {
            let (x, y) = (x.as_f64().unwrap(), y.as_f64().unwrap());
            assert!(
                (x - y).abs() <= 1e-9 * (1.0 + x.abs().max(y.abs())),
                "{path}: {x} vs {y}"
            );
        }
        (Value::Array(x), Value::Array(y)) => {
            assert_eq!(x.len(), y.len(), "{path}");
            for (i, (u, v)) in x.iter().zip(y).enumerate() {
                assert_json_close(u, v, &format!("{path}[{i}]"));
            }
        }
        (Value::Object(x), Value::Object(y)) => {
            assert_eq!(
                x.keys().collect::<Vec<_>>(),
                y.keys().collect::<Vec<_>>(),
                "{path}"
            );
            for (k, u) in x {
                assert_json_close(u, &y[k], &format!("{path}.{k}"));
            }
        }
        _ => assert_eq!(a, b, "{path}"),
    }
}

fn read_json(p: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(p).unwrap()).unwrap()
}

#[test]
fn simulate_is_deterministic() {
    assert_deterministic("simulate", "random_walk.toml");
    assert_deterministic("simulate", "seasonal_t2.toml");
}

#[test]
fn forecast_is_deterministic() {
    assert_deterministic("forecast", "random_walk.toml");
    assert_deterministic("forecast", "seasonal_t2.toml");
}

#[test]
fn robust_is_deterministic() {
    assert_deterministic("robust", "robust_band.toml");
    assert_deterministic("robust", "robust_singleton.toml");
}

#[test]
fn factorize_is_deterministic() {
    assert_deterministic("factorize", "factorize_arma.toml");
    assert_deterministic("factorize", "seasonal_t2.toml");
}

#[test]
fn seed_changes_simulation() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let cfg = configs().join("random_walk.toml");
    assert!(gmi("simulate", &cfg, a.path(), &["--seed", "1"])
        .status
        .success());
    assert!(gmi("simulate", &cfg, b.path(), &["--seed", "2"])
        .status
        .success());
    assert_ne!(
        std::fs::read(a.path().join("series.csv")).unwrap(),
        std::fs::read(b.path().join("series.csv")).unwrap()
    );
}

#[test]
fn random_walk_with_noise_matches_kalman_value() {
    let r = Resolved::load(&configs().join("random_walk.toml"), Overrides::default()).unwrap();
    let (sol, _) = forecast_solution(&r).unwrap();
    let steady = (1.0 + 2f64.sqrt()) / 2.0;
    assert!((sol.mse - steady).abs() < 1e-6, "{}", sol.mse);
}

#[test]
fn forecast_output_equals_library_call() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = configs().join("random_walk.toml");
    run_ok("forecast", &cfg, dir.path());
    let r = Resolved::load(&cfg, Overrides::default()).unwrap();
    for a in cmd_forecast(&r).unwrap() {
        assert_eq!(
            std::fs::read(dir.path().join(&a.name)).unwrap(),
            a.bytes,
            "{}",
            a.name
        );
    }
}

#[test]
fn singleton_robust_equals_forecast() {
    let f = tempfile::tempdir().unwrap();
    let r = tempfile::tempdir().unwrap();
    let cfg = configs().join("robust_singleton.toml");
    run_ok("forecast", &cfg, f.path());
    run_ok("robust", &cfg, r.path());
    let classical = read_json(&f.path().join("solution.json"))["mse"]
        .as_f64()
        .unwrap();
    let worst = read_json(&r.path().join("robust.json"))["worst_case_mse"]
        .as_f64()
        .unwrap();
    assert!(
        (classical - worst).abs() <= 1e-10 * classical,
        "{classical} vs {worst}"
    );
}

#[test]
fn band_robust_passes_audit() {
    let dir = tempfile::tempdir().unwrap();
    run_ok("robust", &configs().join("robust_band.toml"), dir.path());
    let doc = read_json(&dir.path().join("robust.json"));
    assert_eq!(doc["audit"]["violations"], 0);
    assert_eq!(doc["audit"]["samples"], 100);
    assert_eq!(doc["report"]["pass"], true);
    assert!(dir.path().join("least_favorable.csv").exists());
}

#[test]
fn golden_forecast_solution() {
    let dir = tempfile::tempdir().unwrap();
    run_ok("forecast", &configs().join("random_walk.toml"), dir.path());
    assert_json_close(
        &read_json(&dir.path().join("solution.json")),
        &read_json(&golden("random_walk_solution.json")),
        "$",
    );
}

#[test]
fn golden_factorization() {
    let dir = tempfile::tempdir().unwrap();
    run_ok(
        "factorize",
        &configs().join("factorize_arma.toml"),
        dir.path(),
    );
    assert_json_close(
        &read_json(&dir.path().join("factor.json")),
        &read_json(&golden("factorize_arma_factor.json")),
        "$",
    );
}

#[test]
fn missing_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let o = gmi(
        "forecast",
        &dir.path().join("absent.toml"),
        &dir.path().join("out"),
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!o.stderr.is_empty());
    assert!(!dir.path().join("out").exists());
}

#[test]
fn invalid_config_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "grid = 1024\nunknown_key = 1\n").unwrap();
    assert_eq!(
        gmi("forecast", &cfg, &dir.path().join("out"), &[])
            .status
            .code(),
        Some(2)
    );
    let o = gmi(
        "forecast",
        &configs().join("random_walk.toml"),
        &dir.path().join("out"),
        &["--grid", "100"],
    );
    assert_eq!(o.status.code(), Some(2));
    let o = gmi(
        "robust",
        &configs().join("random_walk.toml"),
        &dir.path().join("out"),
        &[],
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(!dir.path().join("out").exists());
}

fn config_with_observations(dir: &Path, csv: &str) -> PathBuf {
    let text = std::fs::read_to_string(configs().join("random_walk.toml")).unwrap();
    std::fs::write(dir.join("obs.csv"), csv).unwrap();
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, text.replace("random_walk_obs.csv", "obs.csv")).unwrap();
    cfg
}

#[test]
fn malformed_csv_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_with_observations(dir.path(), "t,value\n0,1.0\n");
    let o = gmi("forecast", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3));
    let cfg = config_with_observations(dir.path(), "t,component_1\n0,abc\n");
    assert_eq!(
        gmi("forecast", &cfg, &dir.path().join("out"), &[])
            .status
            .code(),
        Some(3)
    );
    assert!(!dir.path().join("out").exists());
}

#[test]
fn short_series_exits_with_data_code() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config_with_observations(dir.path(), "t,component_1\n0,1.0\n1,2.0\n2,2.5\n");
    let o = gmi("forecast", &cfg, &dir.path().join("out"), &[]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("observations"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn numeric_failure_exits_with_numeric_code_and_writes_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let o = gmi(
        "robust",
        &configs().join("robust_band.toml"),
        &out,
        &["--trunc", "2"],
    );
    assert_eq!(o.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("gmi: numerical error"));
    assert!(!out.exists());
}
