//! Acceptance run: one PASS/FAIL line per criterion.

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use gmi_core::cointegrate::{coint_forecast, CointegrationSpec};
use gmi_core::factorize::{
    canonical_factorize, factorize_increment_weighted, factorize_or_zero, invert_factor,
};
use gmi_core::forecast::{
    apply_forecast, factorized_forecast, level_weights, single_value_forecast,
    spectral_characteristic, FunctionalSpec,
};
use gmi_core::increments::{
    dmu_coefficients, fractional_expansion, increment_polynomial, FracSign, IncrementSpec, Pattern,
};
use gmi_core::linalg::{c64, frob, max_abs, CMat};
use gmi_core::minimax::{
    grid_search_worst_case, solve_least_favorable, verify_saddle, AdmissibleClass, Aggregation,
    AuditOptions, ClassPair, GridSearchOptions, Level, SolverConfig,
};
use gmi_core::operators::{build_ptq, factorized_p_inverse, t_from_factors, LagSequence};
use gmi_core::simulate::{brute_force_projection, SimulationConfig, Simulator};
use gmi_core::spectra::{
    beta_abs2_on_grid, eval_density, grid_lambda, increment_to_f, noisy_density, synthesize_causal,
    DensityModel, Role, SpectralDensityGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn conv(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    (0..=n)
        .map(|m| {
            (0..=m)
                .filter(|&i| i < a.len() && m - i < b.len())
                .map(|i| a[i] * b[m - i])
                .sum()
        })
        .collect()
}

/// Coefficients of `(1 − B^stride)^d` up to `n`.
fn binomial_series(d: f64, stride: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n + 1];
    let mut c = 1.0;
    let mut k = 0;
    while k * stride <= n {
        out[k * stride] = c;
        c *= (k as f64 - d) / (k as f64 + 1.0);
        k += 1;
    }
    out
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let window = 64;
    let (mut tested, mut worst_conv, mut worst_sum) = (0, 0.0_f64, 0.0_f64);
    while tested < 200 {
        let r = rng.random_range(1..=3);
        let patterns: Vec<Pattern> = (0..r)
            .map(|_| {
                let mu = rng.random_range(1..=3u32);
                let s = rng.random_range(1..=6 / mu);
                Pattern::integer(mu, s, rng.random_range(0..=3))
            })
            .collect();
        let Ok(spec) = IncrementSpec::new(patterns, 1) else {
            continue;
        };
        let e = increment_polynomial(&spec).unwrap();
        let d = dmu_coefficients(&spec, window).unwrap();
        let c = conv(&e.coeffs, &d.coeffs, window);
        for (m, v) in c.iter().enumerate() {
            worst_conv = worst_conv.max((v - if m == 0 { 1.0 } else { 0.0 }).abs());
        }
        if spec.total_order() >= 1.0 {
            worst_sum = worst_sum.max(e.coeffs.iter().sum::<f64>().abs());
        }
        tested += 1;
    }
    outcome(
        worst_conv == 0.0 && worst_sum == 0.0,
        format!(
            "{tested} specs, max |conv(e,d) - delta| = {worst_conv:e}, max |sum e| = {worst_sum:e}"
        ),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let n = 256;
    let (mut tested, mut rejected, mut worst_inv, mut worst_reg) = (0, 0, 0.0_f64, 0.0_f64);
    while tested < 50 {
        let r = rng.random_range(1..=2);
        let mut seasons: Vec<u32> = Vec::new();
        while seasons.len() < r {
            let s = rng.random_range(1..=6u32);
            if !seasons.contains(&s) {
                seasons.push(s);
            }
        }
        seasons.sort_unstable();
        let ds: Vec<f64> = seasons
            .iter()
            .map(|_| rng.random_range(-0.45..0.45))
            .collect();
        let patterns = seasons
            .iter()
            .zip(&ds)
            .map(|(&s, &d)| Pattern {
                mu: 1,
                s,
                r_int: 0,
                d_frac: d,
            })
            .collect();
        let spec = IncrementSpec::new(patterns, 1).unwrap();
        let (Ok(gp), Ok(gm)) = (
            fractional_expansion(&spec, FracSign::Plus, n),
            fractional_expansion(&spec, FracSign::Minus, n),
        ) else {
            rejected += 1;
            continue;
        };
        let c = conv(&gp.coeffs, &gm.coeffs, n);
        for (m, v) in c.iter().enumerate() {
            worst_inv = worst_inv.max((v - if m == 0 { 1.0 } else { 0.0 }).abs());
        }
        let direct = seasons
            .iter()
            .zip(&ds)
            .fold(binomial_series(0.0, 1, n), |acc, (&s, &d)| {
                conv(&acc, &binomial_series(d, s as usize, n), n)
            });
        for (a, b) in gm.coeffs.iter().zip(&direct) {
            worst_reg = worst_reg.max((a - b).abs());
        }
        tested += 1;
    }
    outcome(
        worst_inv <= 1e-8 && worst_reg <= 1e-8,
        format!("{tested} specs ({rejected} rejected by the gate), max |G+ * G- - delta| = {worst_inv:e}, regrouping error {worst_reg:e}"),
    )
}

fn random_factor(rng: &mut ChaCha8Rng, t: usize) -> Vec<CMat> {
    let deg = rng.random_range(1..=4);
    (0..=deg)
        .map(|_| {
            CMat::from_fn(t, t, |_, _| {
                c64(
                    rng.random_range(-0.6..0.6),
                    if t == 1 {
                        0.0
                    } else {
                        rng.random_range(-0.6..0.6)
                    },
                )
            })
        })
        .collect()
}

/// Returns (reconstruction residual / sup norm, max |ΨΘ − I| over the window).
fn construct_then_factor(rng: &mut ChaCha8Rng, t: usize) -> (f64, f64) {
    let grid = 2048;
    let k = 256;
    let th = random_factor(rng, t);
    let vals: Vec<CMat> = synthesize_causal(&th, grid)
        .iter()
        .map(|x| x * x.adjoint() + CMat::identity(t, t).scale(0.1))
        .collect();
    let w = SpectralDensityGrid::new(vals, Role::Other).unwrap();
    let theta = canonical_factorize(&w, k).unwrap();
    let rec = synthesize_causal(&theta.coeffs, grid);
    let resid = rec
        .iter()
        .zip(&w.values)
        .map(|(x, v)| max_abs(&(x * x.adjoint() - v)))
        .fold(0.0, f64::max);
    let psi = invert_factor(&theta, k).unwrap();
    let mut inv = 0.0_f64;
    for m in 0..=k {
        let mut s = CMat::zeros(t, t);
        for j in 0..=m {
            if j < psi.coeffs.len() && m - j < theta.coeffs.len() {
                s += &psi.coeffs[j] * &theta.coeffs[m - j];
            }
        }
        if m == 0 {
            s -= CMat::identity(t, t);
        }
        inv = inv.max(max_abs(&s));
    }
    (resid / w.sup_norm(), inv)
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut worst_rec, mut worst_inv) = (0.0_f64, 0.0_f64);
    for i in 0..125 {
        let (r, v) = construct_then_factor(&mut rng, if i < 100 { 1 } else { 2 });
        worst_rec = worst_rec.max(r);
        worst_inv = worst_inv.max(v);
    }
    outcome(
        worst_rec <= 1e-6 && worst_inv <= 1e-6,
        format!("100 scalar + 25 2x2 densities, max relative reconstruction residual {worst_rec:e}, max |PsiTheta - I| {worst_inv:e}"),
    )
}

fn random_scalar_problem(
    rng: &mut ChaCha8Rng,
    grid: usize,
) -> (IncrementSpec, SpectralDensityGrid, SpectralDensityGrid) {
    let spec = IncrementSpec::single(1, rng.random_range(1..=2), 1, 1).unwrap();
    let incr = DensityModel::scalar_arma(
        rng.random_range(0.6..1.4),
        &[1.0, rng.random_range(-0.5..0.5)],
        &[1.0, rng.random_range(-0.5..0.5)],
    );
    let f = increment_to_f(&eval_density(&incr, grid).unwrap(), &spec).unwrap();
    let g = eval_density(
        &DensityModel::scalar_ma(&[rng.random_range(0.3..0.8), rng.random_range(-0.2..0.2)]),
        grid,
    )
    .unwrap();
    (spec, f, g)
}

fn random_matrix(rng: &mut ChaCha8Rng, diag: f64, off: f64) -> CMat {
    CMat::from_fn(2, 2, |a, b| {
        if a == b {
            c64(diag + rng.random_range(0.0..0.3), 0.0)
        } else {
            c64(rng.random_range(-off..off), rng.random_range(-off..off))
        }
    })
}

fn random_matrix_problem(
    rng: &mut ChaCha8Rng,
    grid: usize,
) -> (IncrementSpec, SpectralDensityGrid, SpectralDensityGrid) {
    let spec = IncrementSpec::single(1, rng.random_range(1..=2), 1, 2).unwrap();
    let fm = DensityModel::Rational {
        num: vec![random_matrix(rng, 1.0, 0.2), random_matrix(rng, 0.0, 0.2)],
        den: vec![],
    };
    let gm = DensityModel::Rational {
        num: vec![random_matrix(rng, 0.5, 0.1), random_matrix(rng, 0.0, 0.1)],
        den: vec![],
    };
    let f = increment_to_f(&eval_density(&fm, grid).unwrap(), &spec).unwrap();
    (spec, f, eval_density(&gm, grid).unwrap())
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let (grid, n, k) = (4096, 32, 256);
    let (mut worst_p, mut worst_t) = (0.0_f64, 0.0_f64);
    for i in 0..15 {
        let (spec, f, g) = if i < 10 {
            random_scalar_problem(&mut rng, grid)
        } else {
            random_matrix_problem(&mut rng, grid)
        };
        let (p, t, _) = build_ptq(&f, &g, &spec, n).unwrap();
        let theta = factorize_increment_weighted(&f, &g, &spec, k).unwrap();
        let psi = invert_factor(&theta, k).unwrap();
        let (pf, _) = factorized_p_inverse(&theta, &psi, n);
        worst_p = worst_p.max(frob(&(&pf.mat - &p.mat)) / frob(&p.mat));
        let phi = factorize_or_zero(&g, k).unwrap();
        let lags = LagSequence::from_factor(&phi, k + 2 * n + 2);
        let tf = t_from_factors(&psi, &lags, n + 1, n + 1, n);
        worst_t = worst_t.max(frob(&(&tf.mat - &t.mat)) / frob(&t.mat));
    }
    outcome(
        worst_p <= 1e-4 && worst_t <= 1e-4,
        format!("10 scalar + 5 T=2 cases at N={n}, K={k}: max relative error P {worst_p:e}, T {worst_t:e}"),
    )
}

fn criterion_5() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(505);
    let grid = 2048;
    let mut worst = 0.0_f64;
    let mut cases = Vec::new();
    for i in 0..10 {
        let t = if i % 2 == 0 { 1 } else { 2 };
        let (spec, f, g) = if t == 1 {
            random_scalar_problem(&mut rng, grid)
        } else {
            random_matrix_problem(&mut rng, grid)
        };
        let fnl = FunctionalSpec::single(i % 3 / 2, 1 + (i / 2) % t, t).unwrap();
        let sol = spectral_characteristic(&f, &g, &spec, &fnl, 64).unwrap();
        let bf = brute_force_projection(&f, &g, &spec, &fnl, 200).unwrap();
        let rel = (sol.mse / bf.mse - 1.0).abs();
        worst = worst.max(rel);
        cases.push(format!("T={t},s={}", spec.patterns[0].s));
    }
    cases.sort();
    cases.dedup();
    outcome(
        worst <= 0.02,
        format!(
            "10 configurations ({}), max relative gap to the L=200 projection {worst:e}",
            cases.join(" ")
        ),
    )
}

fn criterion_6() -> Outcome {
    let sigma2 = 1.0;
    let grid = 1024;
    let spec = IncrementSpec::single(1, 1, 1, 1).unwrap();
    let f = increment_to_f(
        &eval_density(&DensityModel::scalar_constant(sigma2), grid).unwrap(),
        &spec,
    )
    .unwrap();
    let g = SpectralDensityGrid::zeros(grid, 1, Role::G).unwrap();
    let sol = single_value_forecast(&f, &g, &spec, 0, 1, 16).unwrap();
    let w = level_weights(&sol.filter_weights, &sol.v_weights, &spec, 8).unwrap();
    let w1 = w.get(-1)[0].re;
    let s1 = sol.filter_weights.get(-1)[0].re;
    let sim = Simulator::new(&SimulationConfig::new(
        spec.clone(),
        DensityModel::scalar_constant(sigma2),
        40,
        0,
    ))
    .unwrap();
    let paths = 100_000u64;
    let mut acc = 0.0;
    for seed in 0..paths {
        let p = sim.path(seed);
        let n = p.xi.len() - 1;
        let est = apply_forecast(&p.xi[..n], &sol, &spec).unwrap();
        acc += (p.xi[n][0] - est.re).powi(2);
    }
    let emp = acc / paths as f64;
    let pass = (w1 - 1.0).abs() <= 1e-3
        && (sol.mse - sigma2).abs() <= 1e-3
        && (emp / sol.mse - 1.0).abs() <= 0.05;
    outcome(
        pass,
        format!("level weight on the last value {w1:.6} (increment filter s(-1) = {s1:.2e}), mse {:.6}, Monte Carlo over {paths} paths {emp:.4}", sol.mse),
    )
}

fn random_functional(rng: &mut ChaCha8Rng) -> FunctionalSpec {
    let len = rng.random_range(1..=3);
    let rows: Vec<Vec<f64>> = (0..len)
        .map(|k| {
            vec![if k == 0 {
                1.0
            } else {
                rng.random_range(-0.6..0.6)
            }]
        })
        .collect();
    FunctionalSpec::from_real(&rows).unwrap()
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst = 0.0_f64;
    for _ in 0..10 {
        let (spec, f, g) = random_scalar_problem(&mut rng, 2048);
        let fnl = random_functional(&mut rng);
        let op = spectral_characteristic(&f, &g, &spec, &fnl, 64).unwrap();
        let fa = factorized_forecast(&f, &g, &spec, &fnl, 128).unwrap();
        worst = worst.max((op.mse - fa.mse).abs() / op.mse);
    }
    outcome(
        worst <= 1e-3,
        format!("10 scalar cases, max relative gap operator vs factorized {worst:e}"),
    )
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let grid = 1024;
    let (mut worst_h, mut worst_mse) = (0.0_f64, 0.0_f64);
    for _ in 0..10 {
        let (spec, f, g) = random_scalar_problem(&mut rng, grid);
        let fnl = random_functional(&mut rng);
        let p = noisy_density(&f, &g, &spec).unwrap();
        // g := (p − f)/|β|²; isolated zeros of β take the mean of their neighbours
        let b2 = beta_abs2_on_grid(&spec, grid);
        let mut gr: Vec<f64> = (0..grid)
            .map(|m| {
                if b2[m] > 0.0 {
                    (p.values[m][(0, 0)].re - f.values[m][(0, 0)].re) / b2[m]
                } else {
                    f64::NAN
                }
            })
            .collect();
        for m in 0..grid {
            if gr[m].is_nan() {
                gr[m] = 0.5 * (gr[(m + grid - 1) % grid] + gr[(m + 1) % grid]);
            }
        }
        let g_red = SpectralDensityGrid::from_scalar(&gr, Role::G).unwrap();
        let a = coint_forecast(
            &CointegrationSpec::new(1.0, f.clone(), p).unwrap(),
            &spec,
            &fnl,
            24,
        )
        .unwrap();
        let b = spectral_characteristic(&f, &g_red, &spec, &fnl, 24).unwrap();
        worst_mse = worst_mse.max((a.mse - b.mse).abs() / b.mse.max(1.0));
        for (x, y) in a.h_samples.iter().zip(&b.h_samples) {
            worst_h = worst_h.max((x[0] - y[0]).norm());
        }
    }
    outcome(
        worst_h <= 1e-8 && worst_mse <= 1e-8,
        format!("10 specs (alpha = 1), max |h difference| {worst_h:e}, max mse difference {worst_mse:e}"),
    )
}

fn scalar_grid(grid: usize, f: impl Fn(f64) -> f64) -> SpectralDensityGrid {
    let v: Vec<f64> = (0..grid).map(|m| f(grid_lambda(m, grid))).collect();
    SpectralDensityGrid::from_scalar(&v, Role::G).unwrap()
}

/// Moment level, band envelopes, band level and forecast horizon.
type BandConfig = (f64, fn(f64) -> f64, fn(f64) -> f64, f64, usize);

/// Number, name, time limit in seconds and check.
type Criterion = (u32, &'static str, f64, fn() -> Outcome);

fn criterion_9() -> Outcome {
    let grid = 256;
    let trunc = 24;
    let spec = IncrementSpec::single(1, 1, 1, 1).unwrap();
    let configs: [BandConfig; 3] = [
        (
            1.0,
            |l| 0.2 + 0.1 * l.cos(),
            |l| 0.8 + 0.3 * l.cos(),
            0.45,
            0,
        ),
        (
            1.0,
            |l| 0.1 + 0.05 * (2.0 * l).cos(),
            |l| 0.6 + 0.2 * l.cos(),
            0.3,
            0,
        ),
        (
            2.0,
            |l| 0.2 + 0.1 * l.cos(),
            |l| 0.8 + 0.3 * l.cos(),
            0.5,
            1,
        ),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (i, (level, lo, hi, q, n)) in configs.into_iter().enumerate() {
        let pair = ClassPair::new(
            AdmissibleClass::Moment {
                agg: Aggregation::Trace,
                level: Level::Scalar(level),
            },
            AdmissibleClass::Band {
                agg: Aggregation::Trace,
                lower: scalar_grid(grid, lo),
                upper: scalar_grid(grid, hi),
                level: Level::Scalar(q),
            },
            None,
            1,
        )
        .unwrap();
        let fnl = FunctionalSpec::single(n, 1, 1).unwrap();
        let lf = solve_least_favorable(&pair, &spec, &fnl, &SolverConfig::new(trunc)).unwrap();
        let audit = verify_saddle(
            &lf.f0,
            &lf.g0,
            &pair,
            &spec,
            &fnl,
            &AuditOptions::new(trunc, 900 + i as u64),
        )
        .unwrap();
        let gs =
            grid_search_worst_case(&pair, &spec, &fnl, &GridSearchOptions::new(trunc)).unwrap();
        let gap = (gs.mse / lf.solution.mse - 1.0).abs();
        pass &= audit.samples == 100 && audit.violations == 0 && gap <= 0.01;
        parts.push(format!(
            "#{}: {} violations/{}, worst {:.5} vs grid {:.5}",
            i + 1,
            audit.violations,
            audit.samples,
            lf.solution.mse,
            gs.mse
        ));
    }
    outcome(pass, parts.join("; "))
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("configs")
}

fn run_cli(cmd: &str, config: &Path, out: &Path) -> Vec<(String, Vec<u8>)> {
    let status = Command::new(env!("CARGO_BIN_EXE_gmi"))
        .args([cmd, "--config"])
        .arg(config)
        .arg("--out")
        .arg(out)
        .status()
        .expect("binary runs");
    assert!(status.success(), "{cmd} {} failed", config.display());
    let mut files: Vec<(String, Vec<u8>)> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn criterion_10() -> Outcome {
    let runs = [
        ("simulate", "random_walk.toml"),
        ("simulate", "seasonal_t2.toml"),
        ("forecast", "random_walk.toml"),
        ("forecast", "seasonal_t2.toml"),
        ("robust", "robust_band.toml"),
        ("robust", "robust_singleton.toml"),
        ("factorize", "factorize_arma.toml"),
        ("factorize", "seasonal_t2.toml"),
    ];
    let mut differing = Vec::new();
    let mut bytes = 0;
    for (cmd, cfg) in runs {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let fa = run_cli(cmd, &configs_dir().join(cfg), a.path());
        let fb = run_cli(cmd, &configs_dir().join(cfg), b.path());
        bytes += fa.iter().map(|(_, x)| x.len()).sum::<usize>();
        if fa != fb || fa.is_empty() {
            differing.push(format!("{cmd} {cfg}"));
        }
    }
    outcome(
        differing.is_empty(),
        format!(
            "{} runs of 4 commands repeated, {bytes} bytes compared, differing: {:?}",
            runs.len(),
            differing
        ),
    )
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "coefficient algebra", 5.0, criterion_1),
        (2, "fractional algebra", 30.0, criterion_2),
        (3, "factorization", 60.0, criterion_3),
        (4, "factorized operator cross-checks", 120.0, criterion_4),
        (
            5,
            "forecast vs finite-history projection",
            300.0,
            criterion_5,
        ),
        (6, "random walk sanity", f64::INFINITY, criterion_6),
        (7, "operator vs factorized MSE", f64::INFINITY, criterion_7),
        (8, "cointegration reduction", f64::INFINITY, criterion_8),
        (9, "minimax saddle audit", 600.0, criterion_9),
        (10, "CLI determinism", f64::INFINITY, criterion_10),
    ];
    let mut failed = 0;
    for (id, name, limit, run) in criteria {
        let start = Instant::now();
        let o = run();
        let secs = start.elapsed().as_secs_f64();
        let pass = o.pass && secs < limit;
        failed += usize::from(!pass);
        let budget = if limit.is_finite() {
            format!(" (limit {limit:.0} s)")
        } else {
            String::new()
        };
        println!(
            "criterion {id:>2} [{name}]: {} | {} | {secs:.2} s{budget}",
            if pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
