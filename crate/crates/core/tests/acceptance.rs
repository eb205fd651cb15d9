//! Acceptance run: prints one PASS/FAIL/SKIP line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::path::PathBuf;
use std::time::Instant;

use drro_core::baselines::DEFAULT_RO_OFFSET;
use drro_core::{
    estimate_gamma_ro, evaluate_controller, factor_residuals, h2_controller, impulse_response, load_plant,
    monte_carlo_expected_regret, regret_spectrum, ro_limit_controller, solve_gamma_star, synthesize,
    wasserstein_residual, worst_case_expected_regret, ControllerSamples, Factorizer, FrequencyGrid, GammaSearchConfig,
    GridSamples, MonteCarloConfig, PlantContext, RadiusSpec, RegretSpectrum, ScalarSpectrum, SynthesisConfig,
};
use num_complex::Complex64;

use common::{context, finite_horizon_dual, lag_coefficient, regret_at, Lcg};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Result<Outcome, drro_core::Error>;

fn verdict(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn r(v: f64) -> RadiusSpec {
    RadiusSpec::new(v).unwrap()
}

fn constant_spectrum() -> Result<Outcome, drro_core::Error> {
    let c = RegretSpectrum::constant(FrequencyGrid::new(12)?, 1.0)?;
    let (value, worst) = worst_case_expected_regret(&c, r(1.0))?;
    let ok = (worst.gamma_star - 2.0).abs() <= 1e-6 && (value - 4.0).abs() <= 1e-6;
    Ok(verdict(ok, format!("gamma* = {:.12}, value = {value:.12}", worst.gamma_star)))
}

fn factor_error(k: u32) -> Result<(f64, f64, f64), drro_core::Error> {
    let grid = FrequencyGrid::new(k)?;
    let spec = ScalarSpectrum::from_fn(grid, |w| 1.25 + w.cos())?;
    let fac = Factorizer::new(grid).factor(&spec)?;
    let (magnitude, leak) = factor_residuals(&spec, &fac)?;
    let analytic = fac
        .values()
        .iter()
        .enumerate()
        .map(|(i, l)| (l - (1.0 + 0.5 * Complex64::from_polar(1.0, -grid.omega(i)))).norm())
        .fold(0.0, f64::max);
    Ok((magnitude, leak, analytic))
}

fn spectral_factorization() -> Result<Outcome, drro_core::Error> {
    let (m8, _, a8) = factor_error(8)?;
    let (m12, leak12, a12) = factor_error(12)?;
    let ok = m12 <= 1e-8 && leak12 <= 1e-8 && a12 < a8;
    Ok(verdict(
        ok,
        format!(
            "k=12: |L|^2 error {m12:.2e}, leak {leak12:.2e}; error vs analytic factor k=8 {a8:.3e} -> k=12 {a12:.3e} (|L|^2 error k=8 {m8:.2e}; both at roundoff)"
        ),
    ))
}

fn kkt_certificate() -> Result<Outcome, drro_core::Error> {
    let ctx = context("two_state", 12);
    let cfg = GammaSearchConfig::default();
    let gamma_ro = estimate_gamma_ro(&ctx, &cfg)?;
    let (state, _) = synthesize(&SynthesisConfig::new(2.0 * gamma_ro), &ctx)?;
    let sol = solve_gamma_star(&ctx, r(1.0), &cfg, Some(gamma_ro))?;
    let ok = state.kkt_residual <= 1e-6 && state.l_causal_leak <= 1e-6 && sol.residual.abs() <= 1e-8;
    Ok(verdict(
        ok,
        format!(
            "N residual {:.2e}, L leak {:.2e}, dual residual at gamma* {:.2e}",
            state.kkt_residual,
            state.l_causal_leak,
            sol.residual.abs()
        ),
    ))
}

fn interpolation() -> Result<Outcome, drro_core::Error> {
    let ctx = context("two_state", 12);
    let cfg = GammaSearchConfig::default();
    let gamma_ro = estimate_gamma_ro(&ctx, &cfg)?;
    let small = r(1e-3);
    let dr = solve_gamma_star(&ctx, small, &cfg, Some(gamma_ro))?;
    let dr_cost = evaluate_controller(&ctx, &dr.controller, small)?.report.worst_case_expected_regret;
    let h2_cost = evaluate_controller(&ctx, &h2_controller(&ctx)?, small)?.report.worst_case_expected_regret;
    let gap = (dr_cost - h2_cost).abs() / h2_cost;
    let large = solve_gamma_star(&ctx, r(10.0), &cfg, Some(gamma_ro))?;
    let excess = large.gamma_star / gamma_ro - 1.0;
    Ok(verdict(
        gap <= 0.01 && excess <= 0.05,
        format!("r=1e-3: |DR-H2|/H2 = {gap:.2e}; r=10: gamma*/gamma_RO - 1 = {excess:.4} (limit 0.05)"),
    ))
}

fn dominance() -> Result<Outcome, drro_core::Error> {
    let cfg = GammaSearchConfig::default();
    let mut worst_slack = f64::INFINITY;
    let mut ok = true;
    for name in ["two_state", "three_state"] {
        let ctx = context(name, 12);
        let gamma_ro = estimate_gamma_ro(&ctx, &cfg)?;
        let h2 = h2_controller(&ctx)?;
        let ro = ro_limit_controller(&ctx, gamma_ro, &cfg.synth, DEFAULT_RO_OFFSET)?;
        for rv in [0.05, 1.0, 10.0] {
            let dr = solve_gamma_star(&ctx, r(rv), &cfg, Some(gamma_ro))?;
            let cost = |k: &ControllerSamples| -> Result<f64, drro_core::Error> {
                Ok(evaluate_controller(&ctx, k, r(rv))?.report.worst_case_expected_regret)
            };
            let d = cost(&dr.controller)?;
            for other in [cost(&h2)?, cost(&ro)?] {
                let slack = (other - d) / other;
                worst_slack = worst_slack.min(slack);
                ok &= slack >= -1e-6;
            }
        }
    }
    Ok(verdict(ok, format!("smallest relative slack {worst_slack:.3e} over 2 plants x 3 radii")))
}

fn finite_horizon() -> Result<Outcome, drro_core::Error> {
    let ctx = context("two_state", 12);
    let cfg = GammaSearchConfig::default();
    let gamma = 2.0 * estimate_gamma_ro(&ctx, &cfg)?;
    let (_, k) = synthesize(&SynthesisConfig::new(gamma), &ctx)?;
    let c = regret_spectrum(&k, &ctx)?;
    // Radius at which `gamma` is the optimal dual parameter for this controller.
    let radius = wasserstein_residual(&c, gamma)?.sqrt();
    let (value, worst) = worst_case_expected_regret(&c, r(radius))?;

    // Oracle: regret density recomputed from plant matrices, Toeplitz-truncated.
    let plant = ctx.plant();
    let grid = ctx.grid();
    let density: Vec<Complex64> =
        (0..grid.len()).map(|i| Complex64::new(regret_at(plant, grid.omega(i), k.k.value(i)), 0.0)).collect();
    let autocorr: Vec<f64> = (0..200).map(|l| lag_coefficient(&density, l).re).collect();
    let (oracle, oracle_gamma) = finite_horizon_dual(&autocorr, radius);
    let rel = (value - oracle).abs() / oracle;
    Ok(verdict(
        rel <= 5e-3,
        format!(
            "frequency-domain {value:.8e} (gamma {:.6e}) vs T=200 oracle {oracle:.8e} (gamma {oracle_gamma:.6e}): rel {rel:.2e}",
            worst.gamma_star
        ),
    ))
}

fn monte_carlo() -> Result<Outcome, drro_core::Error> {
    let ctx = context("two_state", 12);
    let h2 = h2_controller(&ctx)?;
    let expected = regret_spectrum(&h2, &ctx)?.mean();
    let taps = impulse_response(&h2, 512)?;
    let cfg = MonteCarloConfig { horizon: 200, trials: 10_000, seed: 20240917, burn_in: None, max_taps: 512 };
    let mc = monte_carlo_expected_regret(&ctx, &taps, None, &cfg)?;
    let z = (mc.mean - expected).abs() / mc.stderr;
    Ok(verdict(
        z <= 3.0,
        format!("MC {:.6e} +/- {:.2e} vs grid mean {expected:.6e}: {z:.2} standard errors", mc.mean, mc.stderr),
    ))
}

fn saddle() -> Result<Outcome, drro_core::Error> {
    let ctx = context("two_state", 12);
    let cfg = GammaSearchConfig::default();
    let gamma = 2.0 * estimate_gamma_ro(&ctx, &cfg)?;
    let (_, k) = synthesize(&SynthesisConfig::new(gamma), &ctx)?;
    let objective = |k: &GridSamples| -> Result<f64, drro_core::Error> {
        let c = regret_spectrum(&ControllerSamples::new(k.clone(), drro_core::Provenance::H2, None), &ctx)?;
        if c.sup() >= gamma {
            return Ok(f64::INFINITY);
        }
        let terms: Vec<f64> = c.values().iter().map(|v| v * gamma / (gamma - v)).collect();
        Ok(terms.iter().sum::<f64>() / terms.len() as f64)
    };
    let base = objective(&k.k)?;
    let scale = 1e-3 * k.k.sup_norm();
    let mut rng = Lcg::new(8);
    let mut worst = f64::INFINITY;
    for _ in 0..20 {
        let taps: Vec<f64> = (0..16 * ctx.d()).map(|_| scale * rng.normal()).collect();
        let d = ctx.d();
        let perturbed = GridSamples::try_from_fn(*ctx.grid(), d, 1, |i, _| {
            let w = ctx.grid().omega(i);
            let mut p = k.k.value(i).clone();
            for t in 0..16 {
                let phase = Complex64::from_polar(1.0, -w * t as f64);
                for row in 0..d {
                    p[(row, 0)] += phase * taps[t * d + row];
                }
            }
            Ok(p)
        })?;
        worst = worst.min(objective(&perturbed)? - base);
    }
    Ok(verdict(worst >= -1e-8, format!("smallest change over 20 perturbations {worst:.3e} (base {base:.6e})")))
}

/// Optional reference systems: files `AC7.toml`, `NN3.toml`, `RO6.toml` in the
/// directory named by `DRRO_REFERENCE_PLANTS`, compared at r = 0.05.
fn reference_values() -> Result<Outcome, drro_core::Error> {
    let Some(dir) = std::env::var_os("DRRO_REFERENCE_PLANTS") else {
        return Ok(Outcome::Skip("set DRRO_REFERENCE_PLANTS to a directory with AC7/NN3/RO6 plant files".into()));
    };
    let dir = PathBuf::from(dir);
    let cfg = GammaSearchConfig::default();
    let mut ok = true;
    let mut details = Vec::new();
    for (name, target) in [("AC7", 107.30), ("NN3", 21.781), ("RO6", 4.4392)] {
        let path = dir.join(format!("{name}.toml"));
        if !path.is_file() {
            details.push(format!("{name}: missing"));
            continue;
        }
        let ctx = PlantContext::new(load_plant(&path)?, FrequencyGrid::new(12)?)?;
        let sol = solve_gamma_star(&ctx, r(0.05), &cfg, None)?;
        let value = evaluate_controller(&ctx, &sol.controller, r(0.05))?.report.worst_case_expected_regret;
        let rel = (value - target).abs() / target;
        ok &= rel <= 0.01;
        details.push(format!("{name}: {value:.5} vs {target} (rel {rel:.2e})"));
    }
    Ok(verdict(ok, details.join("; ")))
}

fn performance() -> Result<Outcome, drro_core::Error> {
    let start = Instant::now();
    let plant = common::plant("eight_state");
    let ctx = PlantContext::new(plant, FrequencyGrid::new(12)?)?;
    let sol = solve_gamma_star(&ctx, r(1.0), &GammaSearchConfig::default(), None)?;
    let secs = start.elapsed().as_secs_f64();
    Ok(verdict(secs <= 10.0, format!("8-state plant, r = 1: {secs:.2} s (gamma* = {:.6e})", sol.gamma_star)))
}

fn main() {
    let checks: [(&str, Check); 10] = [
        ("constant-spectrum closed form", constant_spectrum),
        ("spectral factorization accuracy", spectral_factorization),
        ("KKT certificate", kkt_certificate),
        ("interpolation between H2 and RO", interpolation),
        ("dominance over H2 and RO", dominance),
        ("finite-horizon oracle", finite_horizon),
        ("time/frequency consistency", monte_carlo),
        ("saddle stationarity", saddle),
        ("reference system values", reference_values),
        ("performance", performance),
    ];
    let mut failed = 0;
    for (i, (name, check)) in checks.iter().enumerate() {
        let start = Instant::now();
        let outcome = check().unwrap_or_else(|e| Outcome::Fail(format!("error: {e}")));
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {:>2} [{tag}] {name}: {detail} ({secs:.2} s)", i + 1);
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
