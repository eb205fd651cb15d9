//! Regret spectra, worst-case expected regret over the Wasserstein-2 ball,
//! cross evaluation and a time-domain Monte Carlo check.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use rustfft::{Fft, FftPlanner};

use crate::context::PlantContext;
use crate::error::{Error, Result};
use crate::gamma::RadiusSpec;
use crate::model::{FrequencyGrid, GridSamples};
use crate::numeric::{self, pairwise_mean};
use crate::specfact::{spectral_factor_dft, ScalarSpectrum};
use crate::synthesis::{ControllerSamples, ImpulseResponse};

/// Roundoff allowance below zero before a regret sample is an error.
pub const NEGATIVE_REGRET_CLIP: f64 = 1e-9;

/// `||Delta(w) (K(w) - K_circ(w))||^2` per grid point, unclipped.
pub fn regret_values(ctx: &PlantContext, k: &GridSamples) -> Result<Vec<f64>> {
    let f = ctx.factors();
    k.ensure_compatible(&f.kcirc)?;
    Ok(k.values()
        .par_iter()
        .zip(f.kcirc.values().par_iter())
        .zip(f.delta.values().par_iter())
        .map(|((kv, kc), delta)| (delta * (kv - kc)).norm_squared())
        .collect())
}

/// Scalar regret spectrum `C_K(w) >= 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretSpectrum {
    grid: FrequencyGrid,
    values: Vec<f64>,
    sup: f64,
}

impl RegretSpectrum {
    /// Clips roundoff negatives down to `-1e-9` to zero; anything lower is an error.
    pub fn new(grid: FrequencyGrid, mut values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} regret samples for a grid of {}", values.len(), grid.len())));
        }
        for v in values.iter_mut() {
            if !v.is_finite() {
                return Err(Error::NonFiniteSample("regret spectrum"));
            }
            if *v < -NEGATIVE_REGRET_CLIP {
                return Err(Error::NegativeRegret { value: *v });
            }
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let sup = values.iter().cloned().fold(0.0, f64::max);
        Ok(Self { grid, values, sup })
    }

    pub fn constant(grid: FrequencyGrid, c: f64) -> Result<Self> {
        Self::new(grid, vec![c; grid.len()])
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn sup(&self) -> f64 {
        self.sup
    }
    /// Expected regret under the white unit-variance nominal disturbance.
    pub fn mean(&self) -> f64 {
        pairwise_mean(&self.values)
    }
}

pub fn regret_spectrum(k: &ControllerSamples, ctx: &PlantContext) -> Result<RegretSpectrum> {
    RegretSpectrum::new(*ctx.grid(), regret_values(ctx, &k.k)?)
}

/// `mean_w ((1 - C/gamma)^{-1} - 1)^2`, the Wasserstein-2 transport budget
/// spent by the worst-case disturbance at dual parameter `gamma`.
pub fn wasserstein_residual(c: &RegretSpectrum, gamma: f64) -> Result<f64> {
    if !(gamma > c.sup()) {
        return Err(Error::GammaBelowSpectrum { gamma, sup: c.sup() });
    }
    let terms: Vec<f64> = c
        .values()
        .iter()
        .map(|&v| {
            let e = v / (gamma - v);
            e * e
        })
        .collect();
    Ok(pairwise_mean(&terms))
}

/// Power spectrum of the worst-case disturbance.
#[derive(Debug, Clone, PartialEq)]
pub struct WorstCaseSpectrum {
    pub grid: FrequencyGrid,
    pub m: Vec<f64>,
    pub gamma_star: f64,
    pub w2_budget: f64,
}

impl WorstCaseSpectrum {
    pub fn nominal(grid: FrequencyGrid) -> Self {
        Self { grid, m: vec![1.0; grid.len()], gamma_star: f64::INFINITY, w2_budget: 0.0 }
    }
}

/// Dual parameter `gamma > sup C` with `wasserstein_residual(C, gamma) = r^2`.
///
/// Bisects geometrically on `gamma - sup C`, which keeps full relative
/// precision however close the root sits to the spectrum's peak.
pub fn worst_gamma(c: &RegretSpectrum, r: RadiusSpec) -> Result<f64> {
    let s = c.sup();
    let target = r.squared();
    if s <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let f = |delta: f64| -> f64 {
        let terms: Vec<f64> = c
            .values()
            .iter()
            .map(|&v| {
                let e = v / (delta + (s - v));
                e * e
            })
            .collect();
        pairwise_mean(&terms) - target
    };
    let mut hi = s;
    let mut f_hi = f(hi);
    if f_hi == 0.0 {
        return Ok(s + hi);
    }
    while f_hi > 0.0 {
        hi *= 4.0;
        if !hi.is_finite() || hi > 1e300 {
            return Err(Error::BracketFailure("residual stays above r^2 for every gamma".into()));
        }
        f_hi = f(hi);
    }
    let mut lo = hi;
    loop {
        lo *= 0.25;
        if s + lo == s || lo < f64::MIN_POSITIVE {
            return Err(Error::BracketFailure("residual never exceeds r^2 above the spectrum peak".into()));
        }
        let v = f(lo);
        if v > 0.0 {
            break;
        }
        if v == 0.0 {
            return Ok(s + lo);
        }
        hi = lo;
    }
    for _ in 0..200 {
        let mid = (lo * hi).sqrt();
        if mid <= lo || mid >= hi {
            break;
        }
        let v = f(mid);
        if v == 0.0 {
            return Ok(s + mid);
        }
        if v > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * (s + hi) {
            break;
        }
    }
    Ok(s + 0.5 * (lo + hi))
}

/// Worst-case expected regret over the ball of radius `r` and the spectrum attaining it.
pub fn worst_case_expected_regret(c: &RegretSpectrum, r: RadiusSpec) -> Result<(f64, WorstCaseSpectrum)> {
    let grid = *c.grid();
    if c.sup() <= 0.0 {
        return Ok((0.0, WorstCaseSpectrum::nominal(grid)));
    }
    let gamma = worst_gamma(c, r)?;
    let x: Vec<f64> = c.values().iter().map(|&v| gamma / (gamma - v)).collect();
    // gamma (r^2 - 1) + gamma mean(x), written without the cancellation.
    let cx: Vec<f64> = c.values().iter().zip(&x).map(|(v, xi)| v * xi).collect();
    let value = pairwise_mean(&cx) + gamma * r.squared();
    let dev: Vec<f64> = x.iter().map(|xi| (xi - 1.0) * (xi - 1.0)).collect();
    let w2_budget = pairwise_mean(&dev);
    let m = x.iter().map(|xi| xi * xi).collect();
    Ok((value, WorstCaseSpectrum { grid, m, gamma_star: gamma, w2_budget }))
}

/// `mean_w C(w) M(w)`.
pub fn expected_regret_under(c: &RegretSpectrum, m: &[f64]) -> Result<f64> {
    if m.len() != c.values().len() {
        return Err(Error::GridMismatch(format!(
            "spectrum of length {} against a grid of {}",
            m.len(),
            c.values().len()
        )));
    }
    if let Some(bad) = m.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidConfig(format!("disturbance spectrum has negative sample {bad}")));
    }
    let prod: Vec<f64> = c.values().iter().zip(m).map(|(a, b)| a * b).collect();
    Ok(pairwise_mean(&prod))
}

/// Largest eigenvalue of `T_K* T_K` per grid point, `T_K = [F K + G; K]`.
pub fn operator_norm_profile(k: &ControllerSamples, ctx: &PlantContext) -> Result<Vec<f64>> {
    let resp = ctx.responses();
    k.k.ensure_compatible(&ctx.factors().kcirc)?;
    Ok(k.k
        .values()
        .par_iter()
        .zip(resp.f.values().par_iter())
        .zip(resp.g.values().par_iter())
        .map(|((kv, f), g)| (f * kv + g).norm_squared() + kv.norm_squared())
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegretReport {
    pub controller: String,
    pub r: f64,
    pub gamma_star: f64,
    pub worst_case_expected_regret: f64,
    pub nominal_expected_regret: f64,
    pub profile: Vec<f64>,
}

/// A controller's regret spectrum, its own worst case and the summary report.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub spectrum: RegretSpectrum,
    pub worst: WorstCaseSpectrum,
    pub report: RegretReport,
}

pub fn evaluate_controller(ctx: &PlantContext, k: &ControllerSamples, r: RadiusSpec) -> Result<Evaluation> {
    let spectrum = regret_spectrum(k, ctx)?;
    let (value, worst) = worst_case_expected_regret(&spectrum, r)?;
    let nominal = spectrum.mean();
    if value < nominal - 1e-9 * nominal.max(1.0) {
        return Err(Error::NumericalBreakdown(format!("worst-case regret {value:e} below nominal {nominal:e}")));
    }
    let profile = operator_norm_profile(k, ctx)?;
    let report = RegretReport {
        controller: k.label(),
        r: r.value(),
        gamma_star: worst.gamma_star,
        worst_case_expected_regret: value,
        nominal_expected_regret: nominal,
        profile,
    };
    Ok(Evaluation { spectrum, worst, report })
}

/// `table[i][j]` = expected regret of controller `i` under controller `j`'s worst case.
pub fn cross_evaluate(evals: &[Evaluation]) -> Result<Vec<Vec<f64>>> {
    evals
        .iter()
        .map(|row| evals.iter().map(|col| expected_regret_under(&row.spectrum, &col.worst.m)).collect())
        .collect()
}

#[derive(Debug, Clone)]
pub struct MonteCarloConfig {
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    /// Overrides the automatic burn-in length.
    pub burn_in: Option<usize>,
    /// Cap on taps kept from the disturbance shaping filter and from `K_circ`.
    pub max_taps: usize,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { horizon: 200, trials: 10_000, seed: 0, burn_in: None, max_taps: 512 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonteCarloResult {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
    pub burn_in: usize,
}

/// Number of leading entries holding all but `1e-14` of the energy.
fn effective_len(energy: &[f64]) -> usize {
    let total: f64 = energy.iter().sum();
    if total == 0.0 {
        return 1;
    }
    let mut tail = total;
    for (i, e) in energy.iter().enumerate() {
        tail -= e;
        if tail <= 1e-14 * total {
            return i + 1;
        }
    }
    energy.len()
}

/// Linear convolution through a fixed-size FFT.
struct Convolver {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Convolver {
    fn new(size: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { size, forward: planner.plan_fft_forward(size), inverse: planner.plan_fft_inverse(size) }
    }

    fn spectrum(&self, x: &[f64]) -> Vec<Complex64> {
        let mut buf = vec![Complex64::new(0.0, 0.0); self.size];
        for (b, v) in buf.iter_mut().zip(x) {
            b.re = *v;
        }
        self.forward.process(&mut buf);
        buf
    }

    fn apply(&self, kernel: &[Complex64], signal: &[Complex64], out_len: usize) -> Vec<f64> {
        let mut buf: Vec<Complex64> = kernel.iter().zip(signal).map(|(a, b)| a * b).collect();
        self.inverse.process(&mut buf);
        let scale = 1.0 / self.size as f64;
        buf[..out_len].iter().map(|z| z.re * scale).collect()
    }
}

/// Time-averaged regret of a finite-impulse-response controller against the
/// clairvoyant `K_circ`, estimated by simulating both on shared Gaussian
/// disturbance paths with spectrum `m` (white when `None`).
pub fn monte_carlo_expected_regret(
    ctx: &PlantContext,
    k: &ImpulseResponse,
    m: Option<&[f64]>,
    cfg: &MonteCarloConfig,
) -> Result<MonteCarloResult> {
    let plant = ctx.plant();
    let rho = ctx.open_loop_radius();
    if rho >= 1.0 {
        return Err(Error::UnstableOpenLoop { radius: rho });
    }
    if cfg.horizon == 0 || cfg.trials < 2 {
        return Err(Error::InvalidConfig("Monte Carlo needs a positive horizon and at least two trials".into()));
    }
    let (n, d) = (plant.n(), plant.d());
    if k.taps.iter().any(|t| t.shape() != (d, 1)) {
        return Err(Error::DimensionMismatch(format!("controller taps must be {d}x1")));
    }
    let grid = *ctx.grid();
    let half = grid.len() / 2;
    let cap = cfg.max_taps.min(half - 1).max(1);

    // Disturbance shaping filter.
    let shaping: Vec<f64> = match m {
        None => vec![1.0],
        Some(m) => {
            let spec = ScalarSpectrum::new(grid, m.to_vec())?;
            let coeffs = spectral_factor_dft(&spec)?.coefficients();
            let taps: Vec<f64> = coeffs[..cap].iter().map(|c| c.re).collect();
            let len = effective_len(&taps.iter().map(|x| x * x).collect::<Vec<_>>());
            taps[..len].to_vec()
        }
    };

    // Controller taps, trimmed.
    let k_energy: Vec<f64> = k.taps.iter().map(|t| t.norm_squared()).collect();
    let k_len = effective_len(&k_energy).min(k.taps.len()).max(1);
    let k_taps = &k.taps[..k_len];

    // Two-sided clairvoyant taps.
    let kc = ctx.factors().kcirc.coefficients();
    let pos_energy: Vec<f64> = (0..cap).map(|t| kc[t].norm_squared()).collect();
    let neg_energy: Vec<f64> = (1..cap).map(|t| kc[grid.len() - t].norm_squared()).collect();
    let pos = effective_len(&pos_energy);
    let neg = if neg_energy.iter().all(|e| *e == 0.0) { 0 } else { effective_len(&neg_energy) };
    // kernel index j holds lag j - neg.
    let kc_kernel: Vec<DMatrix<f64>> = (0..neg + pos)
        .map(|j| {
            let lag = j as i64 - neg as i64;
            kc[numeric::index_of_lag(lag, grid.len())].map(|z| z.re)
        })
        .collect();

    let settle = if rho > 0.0 { ((1e-10f64).ln() / rho.ln()).ceil() as usize } else { 1 };
    let burn = cfg.burn_in.unwrap_or_else(|| (4 * n).max(k_len.max(pos) + shaping.len() + settle.min(100_000)));
    let steps = burn + cfg.horizon;
    let w_len = steps + neg;
    let eps_len = w_len + shaping.len() - 1;
    let conv_len = eps_len + shaping.len().max(k_len).max(neg + pos);
    let conv = Convolver::new(conv_len.next_power_of_two());

    let shaping_hat = conv.spectrum(&shaping);
    let entry_hat = |taps: &[DMatrix<f64>], r: usize| -> Vec<Complex64> {
        conv.spectrum(&taps.iter().map(|t| t[(r, 0)]).collect::<Vec<_>>())
    };
    let k_hat: Vec<Vec<Complex64>> = (0..d).map(|r| entry_hat(k_taps, r)).collect();
    let kc_hat: Vec<Vec<Complex64>> = (0..d).map(|r| entry_hat(&kc_kernel, r)).collect();

    let a = plant.a().clone();
    let bu = plant.b_u() * ctx.weighted().inv_sqrt_r();
    let bw = plant.b_w().column(0).into_owned();
    let sqrt_q = ctx.weighted().sqrt_q().clone();
    let colored = m.is_some();

    let per_trial: Vec<f64> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| -> Result<f64> {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(trial as u64));
            let eps: Vec<f64> = (0..eps_len).map(|_| StandardNormal.sample(&mut rng)).collect();
            let w: Vec<f64> = if colored {
                let e_hat = conv.spectrum(&eps);
                let full = conv.apply(&shaping_hat, &e_hat, eps_len);
                full[shaping.len() - 1..].to_vec()
            } else {
                eps
            };
            let w_hat = conv.spectrum(&w);
            let u: Vec<Vec<f64>> = k_hat.iter().map(|kh| conv.apply(kh, &w_hat, steps)).collect();
            let uc: Vec<Vec<f64>> = kc_hat.iter().map(|kh| conv.apply(kh, &w_hat, steps + neg)).collect();

            let mut x = DVector::<f64>::zeros(n);
            let mut xc = DVector::<f64>::zeros(n);
            let mut ut = DVector::<f64>::zeros(d);
            let mut uct = DVector::<f64>::zeros(d);
            let mut acc = Vec::with_capacity(cfg.horizon);
            for t in 0..steps {
                for r in 0..d {
                    ut[r] = u[r][t];
                    uct[r] = uc[r][t + neg];
                }
                if t >= burn {
                    let cost = (&sqrt_q * &x).norm_squared() + ut.norm_squared();
                    let cost_c = (&sqrt_q * &xc).norm_squared() + uct.norm_squared();
                    acc.push(cost - cost_c);
                }
                x = &a * &x + &bu * &ut + &bw * w[t];
                xc = &a * &xc + &bu * &uct + &bw * w[t];
            }
            let v = pairwise_mean(&acc);
            if !v.is_finite() {
                return Err(Error::NonFiniteSample("Monte Carlo trial"));
            }
            Ok(v)
        })
        .collect::<Result<Vec<_>>>()?;

    let mean = pairwise_mean(&per_trial);
    let dev: Vec<f64> = per_trial.iter().map(|v| (v - mean) * (v - mean)).collect();
    let var = numeric::pairwise_sum(&dev) / (cfg.trials - 1) as f64;
    Ok(MonteCarloResult { mean, stderr: (var / cfg.trials as f64).sqrt(), trials: cfg.trials, burn_in: burn })
}
