use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;

use drro_core::baselines::DEFAULT_RO_OFFSET;
use drro_core::{
    cross_evaluate, estimate_gamma_ro, evaluate_controller, h2_controller, import_controller, impulse_response,
    load_controller, load_plant, monte_carlo_expected_regret, regret_spectrum, ro_limit_controller, save_controller,
    solve_gamma_star, synthesize, wasserstein_residual, worst_case_expected_regret, ControllerSamples, Error,
    Evaluation, MonteCarloConfig, PlantContext, Provenance, RadiusSpec, Result,
};

use crate::config::RunConfig;
use crate::output::{field, num, write_atomic, Csv};

pub enum Mode {
    Synth,
    Eval { mc_trials: usize, mc_horizon: usize },
    Sweep,
}

pub const CACHE_FILE: &str = "controller.cache";
const MAX_TAPS: usize = 512;

pub fn dispatch(cfg: &RunConfig, mode: &Mode) -> Result<()> {
    let plant = load_plant(&cfg.plant)?;
    std::fs::create_dir_all(&cfg.out)?;
    let ctx = PlantContext::new(plant, cfg.grid)?;
    log::info!(
        "plant n={} d={} hash={} on {} grid points",
        ctx.n(),
        ctx.d(),
        &ctx.plant_hash()[..12],
        ctx.grid().len()
    );
    match mode {
        Mode::Synth => synth(cfg, &ctx),
        Mode::Eval { mc_trials, mc_horizon } => eval(cfg, &ctx, *mc_trials, *mc_horizon),
        Mode::Sweep => sweep(cfg, &ctx),
    }
}

fn out(cfg: &RunConfig, name: &str) -> PathBuf {
    cfg.out.join(name)
}

fn opt_finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

#[derive(Serialize)]
struct SynthDiagnostics {
    plant_hash: String,
    grid_k: u32,
    radius: Option<f64>,
    /// `None` when the plant needs no hedging and gamma* is unbounded.
    gamma_star: Option<f64>,
    gamma_used: f64,
    gamma_ro: Option<f64>,
    dual_residual: Option<f64>,
    gamma_evaluations: usize,
    iterations: usize,
    fixed_point_residual: f64,
    kkt_residual: f64,
    l_causal_leak: f64,
    k_causal_leak: f64,
    regret_sup: f64,
    worst_case_expected_regret: Option<f64>,
    impulse_tail_energy: f64,
    runtime_s: f64,
    seed: u64,
}

fn synth(cfg: &RunConfig, ctx: &PlantContext) -> Result<()> {
    let start = Instant::now();
    let radius = cfg.radii.first().copied();
    let (state, controller, gamma_star, gamma_ro, dual_residual, evals) = match cfg.gamma {
        Some(g) => {
            let (state, mut k) = match synthesize(&cfg.search.synth.with_gamma(g), ctx) {
                Ok(pair) => pair,
                // Below the threshold the iteration has no fixed point to reach.
                Err(e @ Error::MaxItersExceeded { .. }) => {
                    let gamma_ro = estimate_gamma_ro(ctx, &cfg.search)?;
                    if g <= gamma_ro {
                        return Err(Error::GammaInfeasible {
                            gamma: g,
                            reason: format!("below the feasibility threshold {gamma_ro:e}"),
                        });
                    }
                    return Err(e);
                }
                Err(e) => return Err(e),
            };
            k.provenance = Provenance::DrRo { gamma: g, radius: radius.map(|r| r.value()) };
            k.gamma_used = Some(g);
            let resid = match radius {
                Some(r) => Some(wasserstein_residual(&regret_spectrum(&k, ctx)?, g)? - r.squared()),
                None => None,
            };
            (state, k, g, None, resid, 1)
        }
        None => {
            let r = radius.expect("validated: synth has a radius");
            let sol = solve_gamma_star(ctx, r, &cfg.search, None)?;
            let evals = sol.bracket_history.len();
            (sol.synthesis, sol.controller, sol.gamma_star, Some(sol.gamma_ro), Some(sol.residual), evals)
        }
    };
    let runtime = start.elapsed().as_secs_f64();
    log::info!("synthesized at gamma {:e} in {runtime:.3} s", state.gamma);

    save_controller(out(cfg, CACHE_FILE), ctx.plant_hash(), &controller)?;

    let lags = MAX_TAPS.min(cfg.grid.len() / 2);
    let ir = impulse_response(&controller, lags)?;
    write_impulse_csv(&out(cfg, "impulse_response.csv"), ctx, &ir.taps)?;

    let spectrum = regret_spectrum(&controller, ctx)?;
    let worst = radius.map(|r| worst_case_expected_regret(&spectrum, r)).transpose()?;
    let mut header = vec!["omega", "regret"];
    if worst.is_some() {
        header.push("worst_case_spectrum");
    }
    let mut csv = Csv::new(&header);
    for (i, c) in spectrum.values().iter().enumerate() {
        let mut row = vec![num(cfg.grid.omega(i)), num(*c)];
        if let Some((_, w)) = &worst {
            row.push(num(w.m[i]));
        }
        csv.row(row);
    }
    csv.save(&out(cfg, "regret_spectrum.csv"))?;

    let diag = SynthDiagnostics {
        plant_hash: ctx.plant_hash().to_string(),
        grid_k: cfg.grid.k(),
        radius: radius.map(|r| r.value()),
        gamma_star: opt_finite(gamma_star),
        gamma_used: state.gamma,
        gamma_ro,
        dual_residual,
        gamma_evaluations: evals,
        iterations: state.iters,
        fixed_point_residual: state.fixed_point_residual,
        kkt_residual: state.kkt_residual,
        l_causal_leak: state.l_causal_leak,
        k_causal_leak: state.k_causal_leak,
        regret_sup: state.regret_sup,
        worst_case_expected_regret: worst.map(|(v, _)| v),
        impulse_tail_energy: ir.tail_energy,
        runtime_s: runtime,
        seed: cfg.seed,
    };
    let json = serde_json::to_string_pretty(&diag).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    write_atomic(&out(cfg, "synth_diagnostics.json"), format!("{json}\n").as_bytes())
}

fn write_impulse_csv(path: &Path, ctx: &PlantContext, taps: &[DMatrix<f64>]) -> Result<()> {
    let d = ctx.d();
    let inv = ctx.weighted().inv_sqrt_r();
    let mut header = vec!["lag".to_string()];
    header.extend((0..d).map(|i| format!("k_weighted_{i}")));
    header.extend((0..d).map(|i| format!("k_physical_{i}")));
    let mut csv = Csv::new(&header);
    for (lag, t) in taps.iter().enumerate() {
        let phys = inv * t;
        let mut row = vec![lag.to_string()];
        row.extend((0..d).map(|i| num(t[(i, 0)])));
        row.extend((0..d).map(|i| num(phys[(i, 0)])));
        csv.row(row);
    }
    csv.save(path)
}

/// Reuses `controller.cache` in the output directory when it was built for
/// this plant, grid and radius; synthesizes (and refreshes the cache) otherwise.
fn dr_controller(cfg: &RunConfig, ctx: &PlantContext, r: RadiusSpec, gamma_ro: f64) -> Result<ControllerSamples> {
    let path = out(cfg, CACHE_FILE);
    if path.is_file() {
        match load_controller(&path) {
            Ok(c)
                if c.plant_hash == ctx.plant_hash()
                    && c.controller.grid() == ctx.grid()
                    && c.radius() == Some(r.value()) =>
            {
                log::info!("reusing cached DR-RO controller from {}", path.display());
                return Ok(c.controller);
            }
            Ok(_) => log::info!("cache {} is stale; resynthesizing", path.display()),
            Err(e) => log::warn!("ignoring unreadable cache {}: {e}", path.display()),
        }
    }
    let sol = solve_gamma_star(ctx, r, &cfg.search, Some(gamma_ro))?;
    save_controller(&path, ctx.plant_hash(), &sol.controller)?;
    Ok(sol.controller)
}

fn imported(cfg: &RunConfig, ctx: &PlantContext) -> Result<Vec<ControllerSamples>> {
    cfg.imports
        .iter()
        .map(|p| {
            let mut imp = import_controller(p, ctx)?;
            if let Provenance::Imported { source } = &mut imp.samples.provenance {
                // File name only, so reports do not depend on where the run happened.
                let name = p.file_name().map(|n| n.to_string_lossy().into_owned());
                *source = name.unwrap_or_else(|| source.clone());
            }
            Ok(imp.samples)
        })
        .collect()
}

fn baselines(cfg: &RunConfig, ctx: &PlantContext, gamma_ro: f64) -> Result<Vec<ControllerSamples>> {
    let mut v = vec![h2_controller(ctx)?, ro_limit_controller(ctx, gamma_ro, &cfg.search.synth, DEFAULT_RO_OFFSET)?];
    v.extend(imported(cfg, ctx)?);
    Ok(v)
}

fn evaluate_all(ctx: &PlantContext, ks: &[ControllerSamples], r: RadiusSpec) -> Result<Vec<Evaluation>> {
    ks.par_iter().map(|k| evaluate_controller(ctx, k, r)).collect()
}

fn eval(cfg: &RunConfig, ctx: &PlantContext, mc_trials: usize, mc_horizon: usize) -> Result<()> {
    let r = cfg.radii[0];
    let gamma_ro = estimate_gamma_ro(ctx, &cfg.search)?;
    let mut controllers = vec![dr_controller(cfg, ctx, r, gamma_ro)?];
    controllers.extend(baselines(cfg, ctx, gamma_ro)?);
    let evals = evaluate_all(ctx, &controllers, r)?;
    let labels: Vec<String> = evals.iter().map(|e| e.report.controller.clone()).collect();

    let mut report = Csv::new(&["controller", "r", "gamma_star", "worst_case_regret", "nominal_regret"]);
    for e in &evals {
        let rep = &e.report;
        report.row(vec![
            field(&rep.controller),
            num(rep.r),
            num(rep.gamma_star),
            num(rep.worst_case_expected_regret),
            num(rep.nominal_expected_regret),
        ]);
    }
    report.save(&out(cfg, "report.csv"))?;

    let table = cross_evaluate(&evals)?;
    let mut header = vec!["controller".to_string()];
    header.extend(labels.iter().map(|l| format!("under_{l}")));
    let mut cross = Csv::new(&header);
    for (label, row) in labels.iter().zip(&table) {
        let mut cells = vec![field(label)];
        cells.extend(row.iter().map(|v| num(*v)));
        cross.row(cells);
    }
    cross.save(&out(cfg, "cross.csv"))?;

    let mut header = vec!["omega".to_string()];
    header.extend(labels.iter().map(|l| format!("sigma_max_{l}")));
    let mut profile = Csv::new(&header);
    for i in 0..cfg.grid.len() {
        let mut cells = vec![num(cfg.grid.omega(i))];
        cells.extend(evals.iter().map(|e| num(e.report.profile[i].max(0.0).sqrt())));
        profile.row(cells);
    }
    profile.save(&out(cfg, "profile.csv"))?;

    if mc_trials > 0 {
        monte_carlo_report(cfg, ctx, &controllers, &evals, mc_trials, mc_horizon)?;
    }
    Ok(())
}

fn monte_carlo_report(
    cfg: &RunConfig,
    ctx: &PlantContext,
    controllers: &[ControllerSamples],
    evals: &[Evaluation],
    trials: usize,
    horizon: usize,
) -> Result<()> {
    if !ctx.open_loop_stable() {
        log::warn!("open loop is unstable; Monte Carlo check skipped");
        return Ok(());
    }
    let mc = MonteCarloConfig { horizon, trials, seed: cfg.seed, burn_in: None, max_taps: MAX_TAPS };
    let lags = MAX_TAPS.min(cfg.grid.len() / 2);
    let mut csv = Csv::new(&["controller", "frequency_domain", "monte_carlo", "stderr", "trials", "burn_in"]);
    for (k, e) in controllers.iter().zip(evals) {
        let ir = impulse_response(k, lags)?;
        let res = monte_carlo_expected_regret(ctx, &ir, Some(&e.worst.m), &mc)?;
        csv.row(vec![
            field(&e.report.controller),
            num(e.report.worst_case_expected_regret),
            num(res.mean),
            num(res.stderr),
            res.trials.to_string(),
            res.burn_in.to_string(),
        ]);
    }
    csv.save(&out(cfg, "monte_carlo.csv"))
}

struct SweepRow {
    label: String,
    r: f64,
    gamma_star: f64,
    worst: f64,
    nominal: f64,
}

const SWEEP_HEADER: [&str; 5] = ["controller", "r", "gamma_star", "worst_case_regret", "nominal_regret"];

fn sweep(cfg: &RunConfig, ctx: &PlantContext) -> Result<()> {
    let gamma_ro = estimate_gamma_ro(ctx, &cfg.search)?;
    let base = baselines(cfg, ctx, gamma_ro)?;
    let partial = |i: usize| out(cfg, &format!("sweep.partial.{i:03}.csv"));

    let per_r: Vec<Vec<SweepRow>> = cfg
        .radii
        .par_iter()
        .enumerate()
        .map(|(i, &r)| {
            let sol = solve_gamma_star(ctx, r, &cfg.search, Some(gamma_ro))?;
            let mut ks = vec![sol.controller];
            ks.extend(base.iter().cloned());
            let rows: Vec<SweepRow> = evaluate_all(ctx, &ks, r)?
                .into_iter()
                .map(|e| SweepRow {
                    label: e.report.controller,
                    r: r.value(),
                    gamma_star: e.report.gamma_star,
                    worst: e.report.worst_case_expected_regret,
                    nominal: e.report.nominal_expected_regret,
                })
                .collect();
            let mut csv = Csv::new(&SWEEP_HEADER);
            for row in &rows {
                csv.row(vec![field(&row.label), num(row.r), num(row.gamma_star), num(row.worst), num(row.nominal)]);
            }
            csv.save(&partial(i))?;
            log::info!("sweep point r = {} done", r.value());
            Ok(rows)
        })
        .collect::<Result<_>>()?;

    let mut header = SWEEP_HEADER.to_vec();
    header.push("monotone_in_r");
    let mut csv = Csv::new(&header);
    let labels: Vec<String> = per_r[0].iter().map(|row| row.label.clone()).collect();
    let mut wide_header = vec!["r".to_string()];
    wide_header.extend(labels.iter().cloned());
    let mut wide = Csv::new(&wide_header);
    for (i, rows) in per_r.iter().enumerate() {
        for (j, row) in rows.iter().enumerate() {
            let monotone = i == 0 || {
                let prev = per_r[i - 1][j].worst;
                row.worst >= prev - 1e-9 * prev.abs().max(1e-300)
            };
            if !monotone {
                log::warn!("{}: worst-case regret decreased at r = {}", row.label, row.r);
            }
            csv.row(vec![
                field(&row.label),
                num(row.r),
                num(row.gamma_star),
                num(row.worst),
                num(row.nominal),
                monotone.to_string(),
            ]);
        }
        let mut cells = vec![num(rows[0].r)];
        cells.extend(rows.iter().map(|row| num(row.worst)));
        wide.row(cells);
    }
    csv.save(&out(cfg, "sweep.csv"))?;
    wide.save(&out(cfg, "sweep_wide.csv"))?;
    for i in 0..cfg.radii.len() {
        let _ = std::fs::remove_file(partial(i));
    }
    Ok(())
}
