//! Search for the optimal dual parameter at a given radius, and the
//! feasibility threshold below which no causal controller has a finite dual.

use nalgebra::DVector;

use crate::context::PlantContext;
use crate::error::{Error, ErrorClass, Result};
use crate::regret::{regret_spectrum, wasserstein_residual};
use crate::synthesis::{synthesize_from, ControllerSamples, Provenance, SynthesisConfig, SynthesisState};

/// Wasserstein-2 radius, per time step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusSpec(f64);

impl RadiusSpec {
    pub fn new(r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::InvalidConfig(format!("radius must be positive and finite, got {r}")));
        }
        Ok(Self(r))
    }
    pub fn value(&self) -> f64 {
        self.0
    }
    pub fn squared(&self) -> f64 {
        self.0 * self.0
    }
}

#[derive(Debug, Clone)]
pub struct GammaSearchConfig {
    pub synth: SynthesisConfig,
    /// Tolerance on `residual - r^2`, relative to `max(1, r^2)`.
    pub resid_tol: f64,
    /// Relative bracket width at which the search stops regardless.
    pub width_tol: f64,
    /// Relative bracket width for the feasibility threshold estimate.
    pub ro_rel_width: f64,
    /// Iteration cap used by the feasibility predicate.
    pub feasibility_iters: usize,
    pub max_evals: usize,
}

impl Default for GammaSearchConfig {
    fn default() -> Self {
        Self {
            synth: SynthesisConfig::new(1.0),
            resid_tol: 1e-8,
            width_tol: 1e-10,
            ro_rel_width: 1e-4,
            feasibility_iters: 80,
            max_evals: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GammaSolution {
    pub gamma_star: f64,
    /// `wasserstein_residual(C, gamma_star) - r^2`.
    pub residual: f64,
    pub gamma_ro: f64,
    pub synthesis: SynthesisState,
    pub controller: ControllerSamples,
    pub bracket_history: Vec<(f64, f64)>,
}

/// Errors that mean "this gamma is not above the threshold" rather than a defect.
fn signals_infeasible(e: &Error) -> bool {
    matches!(e.class(), ErrorClass::Infeasible | ErrorClass::Numerical)
}

/// Feasibility threshold `gamma_RO`: the smallest `gamma` at which the fixed
/// point exists and the resulting regret spectrum stays below `gamma`.
///
/// Bracketed by `mean |T|^2 <= gamma_RO <= sup |T|^2`; the returned value is
/// the feasible end of the final bracket.
pub fn estimate_gamma_ro(ctx: &PlantContext, cfg: &GammaSearchConfig) -> Result<f64> {
    let power = ctx.tpart_power();
    let sup = power.iter().cloned().fold(0.0, f64::max);
    if sup <= 0.0 {
        return Ok(0.0);
    }
    let mean = crate::numeric::pairwise_mean(&power);
    let mut synth = cfg.synth.clone();
    synth.max_iters = cfg.feasibility_iters.min(synth.max_iters).max(1);

    let try_gamma = |gamma: f64, warm: Option<&DVector<f64>>| -> Result<Option<DVector<f64>>> {
        match synthesize_from(&synth.with_gamma(gamma), ctx, warm) {
            Ok((state, _)) => Ok(Some(state.bbar)),
            Err(e) if signals_infeasible(&e) => {
                log::debug!("gamma {gamma:e} infeasible: {e}");
                Ok(None)
            }
            Err(e) => Err(e),
        }
    };

    let mut hi = sup * (1.0 + 1e-9);
    let mut warm = None;
    for _ in 0..64 {
        if let Some(b) = try_gamma(hi, None)? {
            warm = Some(b);
            break;
        }
        hi *= 2.0;
    }
    let mut warm = warm.ok_or_else(|| Error::BracketFailure(format!("no feasible gamma found up to {hi:e}")))?;
    let mut lo = mean;
    if try_gamma(lo, Some(&warm))?.is_some() {
        log::debug!("lower bound {lo:e} already feasible");
        return Ok(lo);
    }
    while (hi - lo) > cfg.ro_rel_width * hi {
        let mid = 0.5 * (lo + hi);
        match try_gamma(mid, Some(&warm))? {
            Some(b) => {
                hi = mid;
                warm = b;
            }
            None => lo = mid,
        }
    }
    Ok(hi)
}

struct Trial {
    gamma: f64,
    f: f64,
    state: SynthesisState,
    controller: ControllerSamples,
}

/// Synthesizes at `gamma` and returns `wasserstein_residual(C_K, gamma) - r^2`,
/// or `None` when `gamma` is infeasible.
fn trial(
    ctx: &PlantContext,
    cfg: &GammaSearchConfig,
    r: RadiusSpec,
    gamma: f64,
    warm: Option<&DVector<f64>>,
) -> Result<Option<Trial>> {
    let synth = cfg.synth.with_gamma(gamma);
    let mut attempt = synthesize_from(&synth, ctx, warm);
    if warm.is_some() && matches!(&attempt, Err(e) if signals_infeasible(e)) {
        attempt = synthesize_from(&synth, ctx, None);
    }
    let (state, controller) = match attempt {
        Ok(pair) => pair,
        Err(e) if signals_infeasible(&e) => {
            log::debug!("trial gamma {gamma:e} infeasible: {e}");
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    let c = regret_spectrum(&controller, ctx)?;
    let f = match wasserstein_residual(&c, gamma) {
        Ok(v) => v - r.squared(),
        Err(Error::GammaBelowSpectrum { .. }) => return Ok(None),
        Err(e) => return Err(e),
    };
    Ok(Some(Trial { gamma, f, state, controller }))
}

/// Solves `wasserstein_residual(C_{K_gamma}, gamma) = r^2` for `gamma`.
///
/// The residual decreases in `gamma`, blowing up at the feasibility threshold
/// and vanishing at infinity. The bracket is refined by bisection in
/// `log gamma`, accelerated with Illinois false-position steps on
/// `log residual`, and every synthesis is warm-started from the closest
/// feasible `bbar` found so far.
pub fn solve_gamma_star(
    ctx: &PlantContext,
    r: RadiusSpec,
    cfg: &GammaSearchConfig,
    gamma_ro: Option<f64>,
) -> Result<GammaSolution> {
    let gamma_ro = match gamma_ro {
        Some(g) => g,
        None => estimate_gamma_ro(ctx, cfg)?,
    };
    let target = r.squared();
    let tol = cfg.resid_tol * target.max(1.0);
    let mut history = Vec::new();

    if gamma_ro <= 0.0 {
        // No anticausal part to hedge against: every gamma yields the same
        // controller and the regret spectrum is identically zero.
        let t = trial(ctx, cfg, r, 1e12, None)?
            .ok_or_else(|| Error::BracketFailure("synthesis failed on a plant with gamma_RO = 0".into()))?;
        if t.state.regret_sup > 0.0 {
            log::warn!("gamma_RO = 0 but regret supremum is {:e}", t.state.regret_sup);
        }
        history.push((t.gamma, t.f));
        return Ok(finish(t, f64::INFINITY, 0.0, gamma_ro, r, history));
    }

    let mut lo = gamma_ro * (1.0 + 1e-6);
    let mut f_lo = f64::INFINITY;
    let mut hi = 10.0 * lo;
    let mut evals = 0;

    // Expand upward until the residual drops below r^2.
    let mut warm: Option<DVector<f64>> = None;
    let hi_trial = loop {
        evals += 1;
        if hi > 1e15 || evals > cfg.max_evals {
            return Err(Error::BracketFailure(format!("residual stays above r^2 = {target:e} for gamma up to {hi:e}")));
        }
        match trial(ctx, cfg, r, hi, warm.as_ref())? {
            Some(t) => {
                history.push((t.gamma, t.f));
                if t.f.abs() <= tol {
                    return Ok(finish_trial(t, gamma_ro, r, history));
                }
                if t.f < 0.0 {
                    break t;
                }
                warm = Some(t.state.bbar.clone());
                lo = hi;
                f_lo = t.f;
                hi *= 2.0;
            }
            None => {
                history.push((hi, f64::INFINITY));
                lo = hi;
                hi *= 2.0;
            }
        }
    };
    let mut f_hi = hi_trial.f;
    let mut hi_b = hi_trial.state.bbar.clone();
    let mut lo_b = warm;
    let mut best = Some(hi_trial);
    let mut last_side = 0i8;

    while evals < cfg.max_evals {
        evals += 1;
        let (xl, xh) = (lo.ln(), hi.ln());
        let mut x = 0.5 * (xl + xh);
        if f_lo.is_finite() && f_lo > 0.0 && f_hi < 0.0 {
            let gl = (f_lo + target).ln() - target.ln();
            let gh = (f_hi + target).max(f64::MIN_POSITIVE).ln() - target.ln();
            let mut gl_w = gl;
            let mut gh_w = gh;
            if last_side > 1 {
                gh_w *= 0.5;
            } else if last_side < -1 {
                gl_w *= 0.5;
            }
            let xs = xh - gh_w * (xh - xl) / (gh_w - gl_w);
            let margin = 0.02 * (xh - xl);
            if xs.is_finite() && xs > xl + margin && xs < xh - margin {
                x = xs;
            }
        }
        let gamma = x.exp();
        let warm = if (x - xl).abs() < (xh - x).abs() && lo_b.is_some() { lo_b.as_ref() } else { Some(&hi_b) };
        match trial(ctx, cfg, r, gamma, warm)? {
            Some(t) => {
                history.push((t.gamma, t.f));
                let better = best.as_ref().map_or(true, |b| t.f.abs() < b.f.abs());
                let done = t.f.abs() <= tol;
                if t.f > 0.0 {
                    lo = gamma;
                    f_lo = t.f;
                    lo_b = Some(t.state.bbar.clone());
                    last_side = if last_side < 0 { last_side - 1 } else { -1 };
                } else {
                    hi = gamma;
                    f_hi = t.f;
                    hi_b = t.state.bbar.clone();
                    last_side = if last_side > 0 { last_side + 1 } else { 1 };
                }
                if better {
                    best = Some(t);
                }
                if done {
                    break;
                }
            }
            None => {
                history.push((gamma, f64::INFINITY));
                lo = gamma;
                f_lo = f64::INFINITY;
            }
        }
        if hi - lo <= cfg.width_tol * hi {
            break;
        }
    }
    let best = best.expect("upper bracket always holds a feasible trial");
    Ok(finish_trial(best, gamma_ro, r, history))
}

fn finish_trial(t: Trial, gamma_ro: f64, r: RadiusSpec, history: Vec<(f64, f64)>) -> GammaSolution {
    let (g, f) = (t.gamma, t.f);
    finish(t, g, f, gamma_ro, r, history)
}

fn finish(
    t: Trial,
    gamma_star: f64,
    residual: f64,
    gamma_ro: f64,
    r: RadiusSpec,
    bracket_history: Vec<(f64, f64)>,
) -> GammaSolution {
    let mut controller = t.controller;
    controller.provenance = Provenance::DrRo { gamma: gamma_star, radius: Some(r.value()) };
    controller.gamma_used = Some(t.gamma);
    GammaSolution { gamma_star, residual, gamma_ro, synthesis: t.state, controller, bracket_history }
}
