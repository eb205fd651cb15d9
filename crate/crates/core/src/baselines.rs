//! Comparison controllers: the nominal-optimal (Wiener) controller, the
//! regret-optimal limit, and controllers imported from files.

use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use sha2::{Digest, Sha256};

use crate::cache::read_controller;
use crate::context::PlantContext;
use crate::error::{Error, Result};
use crate::model::{matrix_from_toml, GridSamples};
use crate::numeric::{self, to_complex};
use crate::synthesis::{synthesize, ControllerSamples, Provenance, SynthesisConfig, CAUSAL_LEAK_TOL};

/// Looser causality tolerance for controllers produced elsewhere.
pub const IMPORT_LEAK_TOL: f64 = 1e-4;
/// Default relative offset above the feasibility threshold for the RO limit.
pub const DEFAULT_RO_OFFSET: f64 = 1e-3;

/// `K_H2 = Delta^{-1} U`, the causal part of `Delta K_circ` pulled back through `Delta`.
pub fn h2_controller(ctx: &PlantContext) -> Result<ControllerSamples> {
    let f = ctx.factors();
    let k = f.delta_inv.zip_map(&f.upart, ctx.d(), 1, |di, u| di * u)?;
    if ctx.open_loop_stable() {
        let leak = k.causal_leak();
        if leak > CAUSAL_LEAK_TOL {
            return Err(Error::CausalLeakExceeded { leak, tolerance: CAUSAL_LEAK_TOL });
        }
    }
    Ok(ControllerSamples::new(k, Provenance::H2, None))
}

/// DR-RO controller just above the feasibility threshold.
pub fn ro_limit_controller(
    ctx: &PlantContext,
    gamma_ro: f64,
    cfg: &SynthesisConfig,
    offset: f64,
) -> Result<ControllerSamples> {
    if gamma_ro <= 0.0 {
        let mut k = h2_controller(ctx)?;
        k.provenance = Provenance::Ro { gamma: 0.0 };
        return Ok(k);
    }
    let gamma = (1.0 + offset) * gamma_ro;
    let (_, mut k) = synthesize(&cfg.with_gamma(gamma), ctx)?;
    k.provenance = Provenance::Ro { gamma };
    Ok(k)
}

#[derive(Debug, Clone)]
pub struct ImportedController {
    pub samples: ControllerSamples,
    pub source: String,
    /// SHA-256 of the file contents.
    pub hash: String,
}

/// Loads a controller cache or a state-space controller file and samples it
/// on the context's grid.
///
/// State-space files hold `A_c`, `B_c`, `C_c`, `D_c` with
/// `K(z) = D_c + C_c (zI - A_c)^{-1} B_c`; `A_c`, `B_c`, `C_c` may be omitted
/// for a static gain. Gains map the disturbance to the physical input unless
/// `coordinates = "weighted"` is given.
pub fn import_controller(path: impl AsRef<Path>, ctx: &PlantContext) -> Result<ImportedController> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let hash = hex::encode(Sha256::digest(&bytes));
    let text = String::from_utf8(bytes).map_err(|_| Error::Parse("controller file is not UTF-8".into()))?;
    let source = path.display().to_string();
    let mut samples = if text.starts_with("# drro controller cache") {
        let cached = read_controller(text.as_bytes())?;
        cached.controller.grid().ensure_same(ctx.grid())?;
        if cached.plant_hash != ctx.plant_hash() {
            return Err(Error::PlantHashMismatch { cached: cached.plant_hash, current: ctx.plant_hash().to_string() });
        }
        cached.controller
    } else {
        sample_state_space(&text, ctx)?
    };
    if samples.k.rows() != ctx.d() || samples.k.cols() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "controller is {}x{}, plant needs {}x1",
            samples.k.rows(),
            samples.k.cols(),
            ctx.d()
        )));
    }
    let leak = samples.causal_leak();
    if leak > IMPORT_LEAK_TOL {
        return Err(Error::CausalLeakExceeded { leak, tolerance: IMPORT_LEAK_TOL });
    }
    // Cached controllers keep their own tag; state-space ones are named after the file.
    if let Provenance::Imported { source: s } = &mut samples.provenance {
        if s.is_empty() {
            *s = source.clone();
        }
    }
    Ok(ImportedController { samples, source, hash })
}

fn sample_state_space(text: &str, ctx: &PlantContext) -> Result<ControllerSamples> {
    let table: toml::Table = text.parse().map_err(|e| Error::Parse(format!("{e}")))?;
    let get = |key: &str| table.get(key).map(|v| matrix_from_toml(key, v)).transpose();
    let d_c = get("D_c")?.ok_or_else(|| Error::Parse("missing key `D_c`".into()))?;
    let (rows, cols) = d_c.shape();
    let (a_c, b_c, c_c) = match (get("A_c")?, get("B_c")?, get("C_c")?) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        (None, None, None) => (DMatrix::zeros(0, 0), DMatrix::zeros(0, cols), DMatrix::zeros(rows, 0)),
        _ => return Err(Error::Parse("A_c, B_c and C_c must be given together".into())),
    };
    let m = a_c.nrows();
    if !a_c.is_square() || b_c.shape() != (m, cols) || c_c.shape() != (rows, m) {
        return Err(Error::DimensionMismatch("state-space controller matrices are inconsistent".into()));
    }
    let weighted = match table.get("coordinates").map(|v| v.as_str()) {
        None => false,
        Some(Some("physical")) => false,
        Some(Some("weighted")) => true,
        Some(_) => return Err(Error::Parse("`coordinates` must be \"physical\" or \"weighted\"".into())),
    };
    if rows != ctx.d() || cols != 1 {
        return Err(Error::DimensionMismatch(format!("controller is {rows}x{cols}, plant needs {}x1", ctx.d())));
    }
    let to_weighted =
        if weighted { DMatrix::<Complex64>::identity(rows, rows) } else { to_complex(ctx.weighted().sqrt_r()) };
    let (a, b, c, d) = (to_complex(&a_c), to_complex(&b_c), to_complex(&c_c), to_complex(&d_c));
    let eye = DMatrix::<Complex64>::identity(m, m);
    let grid = *ctx.grid();
    let k = GridSamples::try_from_fn(grid, rows, cols, |i, z| {
        let dyn_part = if m == 0 {
            DMatrix::zeros(rows, cols)
        } else {
            let x =
                numeric::solve_complex(&eye * z - &a, &b).ok_or(Error::SingularResolvent { omega: grid.omega(i) })?;
            &c * x
        };
        Ok(&to_weighted * (&d + dyn_part))
    })?;
    Ok(ControllerSamples::new(k, Provenance::Imported { source: String::new() }, None))
}
