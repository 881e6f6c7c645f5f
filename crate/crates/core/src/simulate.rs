//! Synthetic sequences with periodically stationary GM increments, additive
//! stationary noise, and the finite-history projection oracle.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;

use crate::error::{GmiError, Result};
use crate::factorize::canonical_factorize;
use crate::forecast::FunctionalSpec;
use crate::increments::{
    fractional_expansion, increment_polynomial, FracSign, IncrementSpec, Pattern,
};
use crate::linalg::{c64, solve_refined, CMat, CZERO};
use crate::operators::{b_and_v_weights, WeightVector};
use crate::spectra::{
    eval_density, structural_function, DensityModel, SpectralDensityGrid, DEFAULT_GRID,
};

/// Default factor length of the innovation filter.
pub const DEFAULT_FACTOR_LEN: usize = 256;
/// Default window of the truncated fractional filter.
pub const DEFAULT_FRACTIONAL_WINDOW: usize = 2048;
/// Dense-solve guard `L·T` of the projection oracle.
pub const PROJECTION_GUARD: usize = 4000;

/// Simulation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationConfig {
    /// Increment structure.
    pub spec: IncrementSpec,
    /// Density of the integer-order increments (integer specs) or of the
    /// fully differenced stationary sequence (fractional specs).
    pub innovation: DensityModel,
    /// Optional noise density.
    pub noise: Option<DensityModel>,
    /// Number of retained time points.
    pub length: usize,
    /// Discarded leading points; `None` selects ten filter windows.
    pub burn_in: Option<usize>,
    /// RNG seed.
    pub seed: u64,
    /// Factor length for the innovation and noise filters.
    pub factor_len: usize,
    /// Quadrature grid for factorization.
    pub grid: usize,
    /// Truncation of the fractional filter.
    pub fractional_window: usize,
}

impl SimulationConfig {
    /// Defaults for the given structure, innovation density, length and seed.
    pub fn new(spec: IncrementSpec, innovation: DensityModel, length: usize, seed: u64) -> Self {
        SimulationConfig {
            spec,
            innovation,
            noise: None,
            length,
            burn_in: None,
            seed,
            factor_len: DEFAULT_FACTOR_LEN,
            grid: DEFAULT_GRID,
            fractional_window: DEFAULT_FRACTIONAL_WINDOW,
        }
    }
}

/// Simulated sequence and its increments.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedPath {
    /// `ξ(m)` for the retained points.
    pub xi: Vec<Vec<f64>>,
    /// Integer-order increments `χ(ξ)(m)` at the same points.
    pub increments: Vec<Vec<f64>>,
}

/// Real causal matrix filter with trailing negligible coefficients removed.
#[derive(Debug, Clone, PartialEq)]
pub struct MaFilter {
    /// Coefficients `φ(0..)`.
    pub coeffs: Vec<Vec<f64>>,
    /// Dimension.
    pub dim: usize,
}

impl MaFilter {
    /// Factors a density model.
    pub fn from_density(model: &DensityModel, factor_len: usize, grid: usize) -> Result<Self> {
        let dg = eval_density(model, grid)?;
        let t = dg.dim();
        if dg.sup_norm() == 0.0 {
            return Ok(MaFilter {
                coeffs: vec![vec![0.0; t * t]],
                dim: t,
            });
        }
        let fac = canonical_factorize(&dg, factor_len)?;
        let scale = fac
            .coeffs
            .iter()
            .map(crate::linalg::max_abs)
            .fold(0.0, f64::max);
        let mut keep = 1;
        for (k, c) in fac.coeffs.iter().enumerate() {
            if crate::linalg::max_abs(c) > 1e-13 * scale {
                keep = k + 1;
            }
        }
        let coeffs = fac.coeffs[..keep]
            .iter()
            .map(|c| {
                let mut v = Vec::with_capacity(t * t);
                for i in 0..t {
                    for j in 0..t {
                        v.push(c[(i, j)].re);
                    }
                }
                v
            })
            .collect();
        Ok(MaFilter { coeffs, dim: t })
    }

    /// Window length.
    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    /// True for an empty filter (never produced by the constructors).
    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// `x(m) = Σ_k φ(k) ε(m−k)` for `m` with a full window.
    pub fn apply(&self, eps: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let t = self.dim;
        let k = self.coeffs.len();
        let n = eps.len().saturating_sub(k - 1);
        (0..n)
            .map(|i| {
                let m = i + k - 1;
                let mut out = vec![0.0; t];
                for (j, c) in self.coeffs.iter().enumerate() {
                    let e = &eps[m - j];
                    for r in 0..t {
                        let row = &c[r * t..(r + 1) * t];
                        out[r] += row.iter().zip(e).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                out
            })
            .collect()
    }
}

fn white(rng: &mut ChaCha8Rng, n: usize, t: usize) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..t).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

/// Precomputed filters for repeated path generation.
#[derive(Debug, Clone)]
pub struct Simulator {
    cfg: SimulationConfig,
    innovation: MaFilter,
    fractional: Option<Vec<f64>>,
    e: Vec<f64>,
    burn_in: usize,
}

impl Simulator {
    /// Factors the innovation density and prepares the increment filters.
    pub fn new(cfg: &SimulationConfig) -> Result<Self> {
        cfg.spec.validate()?;
        let t = cfg.spec.period;
        if cfg.innovation.dim() != t {
            return Err(GmiError::InvalidSpec(
                "innovation dimension differs from the period".into(),
            ));
        }
        if cfg.length == 0 {
            return Err(GmiError::InvalidSpec("length must be positive".into()));
        }
        let innovation = MaFilter::from_density(&cfg.innovation, cfg.factor_len, cfg.grid)?;
        let fractional = if cfg.spec.is_integer() {
            None
        } else {
            Some(fractional_expansion(&cfg.spec, FracSign::Plus, cfg.fractional_window - 1)?.coeffs)
        };
        let integer_part = IncrementSpec::new(
            cfg.spec
                .patterns
                .iter()
                .map(|p| Pattern::integer(p.mu, p.s, p.r_int))
                .collect(),
            t,
        )?;
        let e = increment_polynomial(&integer_part)?.coeffs;
        let window = innovation.len() + fractional.as_ref().map(|g| g.len()).unwrap_or(0);
        let burn_in = cfg.burn_in.unwrap_or(10 * window);
        if burn_in < 10 * window {
            return Err(GmiError::InvalidSpec(format!(
                "burn-in {burn_in} below ten filter windows ({window})"
            )));
        }
        Ok(Simulator {
            cfg: cfg.clone(),
            innovation,
            fractional,
            e,
            burn_in,
        })
    }

    /// Burn-in in use.
    pub fn burn_in(&self) -> usize {
        self.burn_in
    }

    /// One path for the given seed.
    pub fn path(&self, seed: u64) -> SimulatedPath {
        let t = self.cfg.spec.period;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let frac_len = self.fractional.as_ref().map(|g| g.len()).unwrap_or(1);
        let total = self.burn_in + self.cfg.length;
        let eps = white(
            &mut rng,
            total + self.innovation.len() - 1 + frac_len - 1,
            t,
        );
        let x = self.innovation.apply(&eps);
        let incr: Vec<Vec<f64>> = match &self.fractional {
            None => x,
            Some(gp) => (0..total)
                .map(|i| {
                    let m = i + gp.len() - 1;
                    let mut out = vec![0.0; t];
                    for (j, c) in gp.iter().enumerate() {
                        for (o, v) in out.iter_mut().zip(&x[m - j]) {
                            *o += c * v;
                        }
                    }
                    out
                })
                .collect(),
        };
        let n = self.e.len() - 1;
        let mut xi: Vec<Vec<f64>> = Vec::with_capacity(total);
        for (m, inc) in incr.iter().enumerate() {
            let mut v = inc.clone();
            for k in 1..=n.min(m) {
                for (o, p) in v.iter_mut().zip(&xi[m - k]) {
                    *o -= self.e[k] * p;
                }
            }
            xi.push(v);
        }
        SimulatedPath {
            xi: xi[self.burn_in..].to_vec(),
            increments: incr[self.burn_in..].to_vec(),
        }
    }
}

/// Generates `ξ` and its increments from the configuration's seed.
pub fn generate_gm_sequence(cfg: &SimulationConfig) -> Result<SimulatedPath> {
    Ok(Simulator::new(cfg)?.path(cfg.seed))
}

/// Stationary noise sampler.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    filter: MaFilter,
}

impl NoiseSampler {
    /// Factors the noise density with the default factor length and grid.
    pub fn new(g: &DensityModel) -> Result<Self> {
        Ok(NoiseSampler {
            filter: MaFilter::from_density(g, DEFAULT_FACTOR_LEN, DEFAULT_GRID)?,
        })
    }

    /// `n` noise vectors for the given seed.
    pub fn sample(&self, n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = white(&mut rng, n + self.filter.len() - 1, self.filter.dim);
        self.filter.apply(&eps)
    }
}

/// `ζ = ξ + η` with `η` stationary of density `g`.
pub fn add_noise(xi: &[Vec<f64>], g: &DensityModel, seed: u64) -> Result<Vec<Vec<f64>>> {
    let t = xi.first().map(|v| v.len()).unwrap_or(g.dim());
    if g.dim() != t {
        return Err(GmiError::InvalidSpec(
            "noise dimension differs from the series".into(),
        ));
    }
    let eta = NoiseSampler::new(g)?.sample(xi.len(), seed);
    Ok(xi
        .iter()
        .zip(&eta)
        .map(|(x, e)| x.iter().zip(e).map(|(a, b)| a + b).collect())
        .collect())
}

/// Periodogram `I(ω_j) = |Σ_t x(t) e^{-iω_j t}|² / n`, `ω_j = 2πj/n`.
pub fn periodogram(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut buf: Vec<Complex64> = x.iter().map(|&v| c64(v, 0.0)).collect();
    FftPlanner::<f64>::new()
        .plan_fft_forward(n)
        .process(&mut buf);
    buf.iter().map(|z| z.norm_sqr() / n as f64).collect()
}

/// Result of the finite-history projection.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    /// Weights on the observed increments `k = −L..=−1`.
    pub weights: WeightVector,
    /// Projection MSE.
    pub mse: f64,
    /// Smallest pivot ratio reported by the dense solve.
    pub cond_estimate: f64,
}

fn lag_quadrature(values: &[CMat], m: i64) -> CMat {
    let grid = values.len();
    let t = values[0].nrows();
    let mut acc = CMat::zeros(t, t);
    for (i, v) in values.iter().enumerate() {
        let lam = crate::spectra::grid_lambda(i, grid);
        acc += v * Complex64::from_polar(1.0, lam * m as f64);
    }
    acc / c64(grid as f64, 0.0)
}

fn vt_m(v: &[Complex64], m: &CMat) -> Vec<Complex64> {
    (0..m.ncols())
        .map(|j| (0..v.len()).map(|i| v[i] * m[(i, j)]).sum())
        .collect()
}

/// Projects `H = Σ b(l)ᵀ χ(ξ)(l) + Σ c_η(m)ᵀ η(m)` onto the observed increments
/// `χ(ζ)(k)`, `k = −L..=−1`, using structural-function lags of `ξ` and
/// quadrature lags of `g`, and returns the weights and the MSE.
pub fn brute_force_projection(
    f: &SpectralDensityGrid,
    g: &SpectralDensityGrid,
    spec: &IncrementSpec,
    fnl: &FunctionalSpec,
    l: usize,
) -> Result<ProjectionResult> {
    let t = spec.period;
    if l * t > PROJECTION_GUARD {
        return Err(GmiError::InvalidSpec(format!(
            "history {l} x {t} exceeds the dense guard {PROJECTION_GUARD}"
        )));
    }
    if l == 0 {
        return Err(GmiError::InsufficientData("empty history".into()));
    }
    let e = increment_polynomial(spec)?;
    let n = e.degree() as i64;
    let a = &fnl.weights;
    let na = a.len() as i64 - 1;
    let (b, _) = b_and_v_weights(a, spec)?;
    let steps = spec.steps();
    let span = l as i64 + na + 2 * n + 1;
    let mut fl = Vec::with_capacity((2 * span + 1) as usize);
    for m in -span..=span {
        fl.push(structural_function(f, spec, m, &steps, &steps)?);
    }
    let fget = |m: i64| fl[(m + span) as usize].clone();
    let gl: Vec<CMat> = (-span..=span)
        .map(|m| lag_quadrature(&g.values, m))
        .collect();
    let gget = |m: i64| gl[(m + span) as usize].clone();
    // c_η(m) = Σ_i e(i) b(m+i) − a(m), m = −n..=N
    let c_eta: Vec<(i64, Vec<Complex64>)> = (-n..=na)
        .map(|m| {
            let mut v = vec![CZERO; t];
            for i in 0..=n {
                for (x, y) in v.iter_mut().zip(b.get(m + i)) {
                    *x += y * e.get(i);
                }
            }
            for (x, y) in v.iter_mut().zip(a.get(m)) {
                *x -= y;
            }
            (m, v)
        })
        .collect();
    let ks: Vec<i64> = (-(l as i64)..=-1).collect();
    let cov_obs = |j: i64, k: i64| -> CMat {
        let mut s = fget(j - k);
        for i in 0..=n {
            for q in 0..=n {
                let w = e.get(i) * e.get(q);
                if w != 0.0 {
                    s += gget(j - i - k + q).scale(w);
                }
            }
        }
        s
    };
    let dim = l * t;
    let mut gram = CMat::zeros(dim, dim);
    for (jj, &j) in ks.iter().enumerate() {
        for (kk, &k) in ks.iter().enumerate() {
            // block (j, k) of the system is Γ(k, j)ᵀ
            let blk = cov_obs(k, j).transpose();
            gram.view_mut((jj * t, kk * t), (t, t)).copy_from(&blk);
        }
    }
    let mut gamma = vec![CZERO; dim];
    for (jj, &j) in ks.iter().enumerate() {
        let mut row = vec![CZERO; t];
        for lb in 0..b.len() as i64 {
            let r = vt_m(&b.get(lb), &fget(lb - j));
            for (x, y) in row.iter_mut().zip(r) {
                *x += y;
            }
        }
        for (m, c) in &c_eta {
            for i in 0..=n {
                let w = e.get(i);
                if w == 0.0 {
                    continue;
                }
                let r = vt_m(c, &gget(m - j + i));
                for (x, y) in row.iter_mut().zip(r) {
                    *x += y * w;
                }
            }
        }
        gamma[jj * t..(jj + 1) * t].copy_from_slice(&row);
    }
    let mut var_h = CZERO;
    for l1 in 0..b.len() as i64 {
        for l2 in 0..b.len() as i64 {
            let r = vt_m(&b.get(l1), &fget(l1 - l2));
            var_h += r
                .iter()
                .zip(b.get(l2))
                .map(|(x, y)| x * y.conj())
                .sum::<Complex64>();
        }
    }
    for (m1, c1) in &c_eta {
        for (m2, c2) in &c_eta {
            let r = vt_m(c1, &gget(m1 - m2));
            var_h += r
                .iter()
                .zip(c2)
                .map(|(x, y)| x * y.conj())
                .sum::<Complex64>();
        }
    }
    let sol = solve_refined(&gram, &gamma)?;
    let explained: Complex64 = gamma.iter().zip(&sol.x).map(|(x, y)| x * y.conj()).sum();
    Ok(ProjectionResult {
        weights: WeightVector::from_flat(-(l as i64), t, &sol.x),
        mse: (var_h - explained).re,
        cond_estimate: sol.cond_estimate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forecast::{single_value_forecast, spectral_characteristic};
    use crate::spectra::{increment_to_f, Role};

    #[test]
    fn random_walk_variance_slope() {
        let spec = IncrementSpec::single(1, 1, 1, 1).unwrap();
        let cfg = SimulationConfig::new(spec, DensityModel::scalar_constant(1.0), 50, 1);
        let sim = Simulator::new(&cfg).unwrap();
        let paths = 4000;
        let mut v10 = 0.0;
        let mut v40 = 0.0;
        for s in 0..paths {
            let p = sim.path(s);
            v10 += (p.xi[10][0] - p.xi[0][0]).powi(2);
            v40 += (p.xi[40][0] - p.xi[0][0]).powi(2);
        }
        let slope = (v40 - v10) / paths as f64 / 30.0;
        assert!((slope - 1.0).abs() < 0.1, "slope {slope}");
    }

    #[test]
    fn zero_innovations_give_constant_sequence() {
        let spec = IncrementSpec::single(1, 1, 1, 1).unwrap();
        let cfg = SimulationConfig::new(spec, DensityModel::scalar_constant(0.0), 20, 3);
        let p = generate_gm_sequence(&cfg).unwrap();
        assert!(p.xi.iter().all(|v| v[0] == p.xi[0][0]));
    }

    #[test]
    fn stationary_periodogram_matches_density() {
        let spec = IncrementSpec::single(1, 1, 0, 1).unwrap();
        let model = DensityModel::scalar_ma(&[1.0, 0.6]);
        let n = 8192;
        let cfg = SimulationConfig::new(spec, model.clone(), n, 11);
        let p = generate_gm_sequence(&cfg).unwrap();
        let x: Vec<f64> = p.xi.iter().map(|v| v[0]).collect();
        let per = periodogram(&x);
        // smooth over bands of 256 frequencies and compare at band centres
        for band in 1..8 {
            let lo = band * 256;
            let avg: f64 = per[lo..lo + 256].iter().sum::<f64>() / 256.0;
            let w = 2.0 * std::f64::consts::PI * (lo as f64 + 128.0) / n as f64;
            let target = 1.0 + 0.36 + 1.2 * w.cos();
            assert!(
                (avg / target - 1.0).abs() < 0.2,
                "band {band}: {avg} vs {target}"
            );
        }
    }

    #[test]
    fn noise_is_identity_for_zero_density_and_reproducible() {
        let xi: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64]).collect();
        assert_eq!(
            add_noise(&xi, &DensityModel::scalar_constant(0.0), 4).unwrap(),
            xi
        );
        let a = add_noise(&xi, &DensityModel::scalar_ma(&[1.0, 0.2]), 9).unwrap();
        let b = add_noise(&xi, &DensityModel::scalar_ma(&[1.0, 0.2]), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn noise_variance_matches_density_integral() {
        let s = NoiseSampler::new(&DensityModel::scalar_ma(&[1.0, 0.5])).unwrap();
        let eta = s.sample(200_000, 5);
        let var = eta.iter().map(|v| v[0] * v[0]).sum::<f64>() / eta.len() as f64;
        assert!((var - 1.25).abs() < 0.03, "var {var}");
    }

    #[test]
    fn projection_white_noise_has_zero_weights() {
        let spec = IncrementSpec::single(1, 1, 0, 1).unwrap();
        let f = eval_density(&DensityModel::scalar_constant(1.0), 256).unwrap();
        let g = SpectralDensityGrid::zeros(256, 1, Role::G).unwrap();
        let fnl = FunctionalSpec::single(0, 1, 1).unwrap();
        let r = brute_force_projection(&f, &g, &spec, &fnl, 10).unwrap();
        assert!(r.weights.max_abs() < 1e-12);
        assert!((r.mse - 1.0).abs() < 1e-12);
    }

    #[test]
    fn projection_monotone_and_matches_forecast() {
        let spec = IncrementSpec::single(1, 1, 1, 1).unwrap();
        let f = increment_to_f(
            &eval_density(&DensityModel::scalar_ma(&[1.0, 0.4]), 2048).unwrap(),
            &spec,
        )
        .unwrap();
        let g = eval_density(&DensityModel::scalar_constant(0.3), 2048).unwrap();
        let fnl = FunctionalSpec::single(1, 1, 1).unwrap();
        let m: Vec<f64> = [5, 20, 60]
            .iter()
            .map(|&l| brute_force_projection(&f, &g, &spec, &fnl, l).unwrap().mse)
            .collect();
        assert!(m[0] >= m[1] - 1e-10 && m[1] >= m[2] - 1e-10, "{m:?}");
        let sol = single_value_forecast(&f, &g, &spec, 1, 1, 64).unwrap();
        assert!(
            (m[2] / sol.mse - 1.0).abs() < 0.02,
            "{} vs {}",
            m[2],
            sol.mse
        );
        let sol2 = spectral_characteristic(&f, &g, &spec, &fnl, 64).unwrap();
        assert_eq!(sol.mse, sol2.mse);
    }
}
