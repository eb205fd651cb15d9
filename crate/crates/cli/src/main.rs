//! `drro`: synthesize DR-RO controllers and compare worst-case expected regret.

mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drro_core::{Error, ErrorClass};

use crate::config::{CommonArgs, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "drro", version, about = "Distributionally robust regret-optimal control synthesis")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Synthesize the DR-RO controller for one radius (or one fixed gamma).
    Synth(CommonArgs),
    /// Compare DR-RO, H2, RO and imported controllers at one radius.
    Eval(EvalArgs),
    /// Evaluate all controllers over several radii.
    Sweep(CommonArgs),
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Monte Carlo trials per controller under its own worst case (0 disables).
    #[arg(long, default_value_t = 0)]
    mc_trials: usize,
    /// Monte Carlo horizon.
    #[arg(long, default_value_t = 200)]
    mc_horizon: usize,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 2,
        ErrorClass::Numerical => 3,
        ErrorClass::Infeasible => 4,
    }
}

fn report_error(e: &Error) -> ExitCode {
    let class = match e.class() {
        ErrorClass::Config => "config",
        ErrorClass::Numerical => "numerical",
        ErrorClass::Infeasible => "infeasible",
    };
    let code = exit_code(e);
    let record = serde_json::json!({
        "error": { "kind": e.kind(), "class": class, "message": e.to_string(), "exit_code": code }
    });
    eprintln!("{record}");
    ExitCode::from(code)
}

fn run(cli: Cli) -> drro_core::Result<()> {
    let (common, mode) = match cli.command {
        Command::Synth(c) => (c, commands::Mode::Synth),
        Command::Eval(e) => (e.common, commands::Mode::Eval { mc_trials: e.mc_trials, mc_horizon: e.mc_horizon }),
        Command::Sweep(c) => (c, commands::Mode::Sweep),
    };
    let cfg = RunConfig::from_args(common, &mode)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| commands::dispatch(&cfg, &mode))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(&e),
    }
}
