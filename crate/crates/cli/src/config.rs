use std::path::PathBuf;

use clap::Args;
use drro_core::{Error, FrequencyGrid, GammaSearchConfig, RadiusSpec, Result};

use crate::commands::Mode;

#[derive(Args, Debug, Clone)]
pub struct CommonArgs {
    /// Plant file (TOML with A, B_u, B_w, Q, R).
    #[arg(long)]
    pub plant: PathBuf,
    /// Grid size exponent: N = 2^k frequency samples.
    #[arg(long, default_value_t = FrequencyGrid::DEFAULT_K)]
    pub grid_k: u32,
    /// Wasserstein-2 radius; repeat for sweeps.
    #[arg(long = "radius", allow_hyphen_values = true)]
    pub radius: Vec<f64>,
    /// Synthesize at this gamma instead of searching for gamma*.
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<f64>,
    /// Output directory.
    #[arg(long, env = "DRRO_OUT_DIR", default_value = "drro-out")]
    pub out: PathBuf,
    /// Seed for randomized checks.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads (default: all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Fixed-point tolerance on the relative step of the parameter.
    #[arg(long)]
    pub tol_fp: Option<f64>,
    /// Tolerance on the dual residual, relative to max(1, r^2).
    #[arg(long)]
    pub tol_gamma: Option<f64>,
    /// Extra controller to compare (cache file or state-space TOML); repeatable.
    #[arg(long = "import-controller")]
    pub import_controller: Vec<PathBuf>,
}

/// Validated run configuration.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub plant: PathBuf,
    pub grid: FrequencyGrid,
    pub radii: Vec<RadiusSpec>,
    pub gamma: Option<f64>,
    pub out: PathBuf,
    pub seed: u64,
    pub jobs: Option<usize>,
    pub search: GammaSearchConfig,
    pub imports: Vec<PathBuf>,
}

fn positive(name: &str, v: Option<f64>) -> Result<Option<f64>> {
    match v {
        Some(x) if !(x > 0.0 && x.is_finite()) => {
            Err(Error::InvalidConfig(format!("--{name} must be positive and finite, got {x}")))
        }
        other => Ok(other),
    }
}

/// Sorts radii and drops exact duplicates, warning once per duplicate.
pub fn dedupe_radii(values: &[f64]) -> Vec<f64> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out: Vec<f64> = Vec::with_capacity(sorted.len());
    for r in sorted {
        if out.last() == Some(&r) {
            log::warn!("radius {r} given more than once; duplicate dropped");
        } else {
            out.push(r);
        }
    }
    out
}

impl RunConfig {
    pub fn from_args(a: CommonArgs, mode: &Mode) -> Result<Self> {
        let grid = FrequencyGrid::new(a.grid_k)?;
        let gamma = positive("gamma", a.gamma)?;
        let tol_fp = positive("tol-fp", a.tol_fp)?;
        let tol_gamma = positive("tol-gamma", a.tol_gamma)?;
        if a.jobs == Some(0) {
            return Err(Error::InvalidConfig("--jobs must be at least 1".into()));
        }
        if !a.plant.is_file() {
            return Err(Error::Parse(format!("plant file {} not found", a.plant.display())));
        }
        for p in &a.import_controller {
            if !p.is_file() {
                return Err(Error::Parse(format!("controller file {} not found", p.display())));
            }
        }
        let raw = match mode {
            Mode::Sweep => dedupe_radii(&a.radius),
            _ => a.radius.clone(),
        };
        let radii = raw.iter().map(|&r| RadiusSpec::new(r)).collect::<Result<Vec<_>>>()?;
        match mode {
            Mode::Synth if gamma.is_none() && radii.len() != 1 => {
                return Err(Error::InvalidConfig("synth needs exactly one --radius (or --gamma)".into()));
            }
            Mode::Synth if radii.len() > 1 => {
                return Err(Error::InvalidConfig("synth takes at most one --radius".into()));
            }
            Mode::Eval { .. } if radii.len() != 1 => {
                return Err(Error::InvalidConfig("eval needs exactly one --radius".into()));
            }
            Mode::Sweep if radii.len() < 2 => {
                return Err(Error::InvalidConfig("sweep needs at least two distinct --radius values".into()));
            }
            _ => {}
        }
        if gamma.is_some() && !matches!(mode, Mode::Synth) {
            return Err(Error::InvalidConfig("--gamma is only accepted by synth".into()));
        }
        let mut search = GammaSearchConfig::default();
        if let Some(t) = tol_fp {
            search.synth.fp_tol = t;
        }
        if let Some(t) = tol_gamma {
            search.resid_tol = t;
        }
        search.synth.validate()?;
        Ok(Self {
            plant: a.plant,
            grid,
            radii,
            gamma,
            out: a.out,
            seed: a.seed,
            jobs: a.jobs,
            search,
            imports: a.import_controller,
        })
    }
}
