//! Fixed-point synthesis of the suboptimal DR-RO controller at a given `gamma`.
//!
//! The unknown is the real vector `bbar` (length `n`). One application of the
//! map runs
//!
//! 1. `S(w) = Cbar (e^{-jw} I - Abar)^{-1} bbar` (strictly anticausal),
//! 2. `N(w) = (1 + sqrt(1 + 4 |S(w)|^2 / gamma))^2 / 4`,
//! 3. `L` = cepstral spectral factor of `N`,
//! 4. `bbar' = mean_w (I - e^{jw} Abar)^{-1} Dbar L(w)`,
//!
//! and the controller is `K = K_circ - Delta^{-1} S / L`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::context::PlantContext;
use crate::error::{Error, Result};
use crate::model::{FrequencyGrid, GridSamples};
use crate::numeric::{self, to_complex};
use crate::regret::regret_values;
use crate::riccati::AdjointTriple;
use crate::specfact::{ScalarFactor, ScalarSpectrum};

/// Imaginary part tolerated in the integrated parameter before it is discarded.
pub const IMAGINARY_LEAK_TOL: f64 = 1e-6;
/// Causality tolerance for synthesized controllers and factors.
pub const CAUSAL_LEAK_TOL: f64 = 1e-6;
/// Consecutive failed Newton line searches taken as evidence of no fixed point.
const NEWTON_STALL_LIMIT: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixedPointMethod {
    /// Newton steps on `F(b) - b` with a finite-difference Jacobian, falling
    /// back to damped Picard steps when the line search fails.
    Newton,
    /// Plain damped iteration `b <- (1 - beta) b + beta F(b)`.
    Picard,
}

#[derive(Debug, Clone)]
pub struct SynthesisConfig {
    pub gamma: f64,
    pub fp_tol: f64,
    pub max_iters: usize,
    pub damping: f64,
    pub method: FixedPointMethod,
}

impl SynthesisConfig {
    pub const DEFAULT_FP_TOL: f64 = 1e-9;
    pub const DEFAULT_MAX_ITERS: usize = 500;

    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            fp_tol: Self::DEFAULT_FP_TOL,
            max_iters: Self::DEFAULT_MAX_ITERS,
            damping: 1.0,
            method: FixedPointMethod::Newton,
        }
    }

    pub fn with_gamma(&self, gamma: f64) -> Self {
        Self { gamma, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidConfig(format!("gamma must be positive, got {}", self.gamma)));
        }
        if !(self.fp_tol > 0.0) {
            return Err(Error::InvalidConfig("fixed-point tolerance must be positive".into()));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::InvalidConfig(format!("damping {} outside (0, 1]", self.damping)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Provenance {
    DrRo { gamma: f64, radius: Option<f64> },
    H2,
    Ro { gamma: f64 },
    Imported { source: String },
}

impl Provenance {
    /// Short controller label used in reports.
    pub fn label(&self) -> String {
        match self {
            Provenance::DrRo { .. } => "DR-RO".into(),
            Provenance::H2 => "H2".into(),
            Provenance::Ro { .. } => "RO".into(),
            Provenance::Imported { source } => format!("imported:{source}"),
        }
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::DrRo { gamma, radius: Some(r) } => write!(f, "DR-RO(gamma={gamma:e},r={r:e})"),
            Provenance::DrRo { gamma, radius: None } => write!(f, "DR-RO(gamma={gamma:e})"),
            Provenance::H2 => write!(f, "H2"),
            Provenance::Ro { gamma } => write!(f, "RO(gamma={gamma:e})"),
            Provenance::Imported { source } => write!(f, "imported({source})"),
        }
    }
}

/// Frequency samples of a causal controller `w -> u'` in weighted input coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerSamples {
    pub k: GridSamples,
    pub provenance: Provenance,
    pub gamma_used: Option<f64>,
}

impl ControllerSamples {
    pub fn new(k: GridSamples, provenance: Provenance, gamma_used: Option<f64>) -> Self {
        Self { k, provenance, gamma_used }
    }

    pub fn grid(&self) -> &FrequencyGrid {
        self.k.grid()
    }

    pub fn causal_leak(&self) -> f64 {
        self.k.causal_leak()
    }

    pub fn label(&self) -> String {
        self.provenance.label()
    }
}

#[derive(Debug, Clone)]
pub struct SynthesisState {
    pub gamma: f64,
    pub bbar: DVector<f64>,
    pub s_minus: GridSamples,
    pub nspec: ScalarSpectrum,
    pub lfac: ScalarFactor,
    pub iters: usize,
    /// Relative step `||F(b) - b|| / max(1, ||b||)` at every iterate.
    pub history: Vec<f64>,
    /// `sup_w |N(w) - N(w; S of the re-mapped bbar)|`.
    pub kkt_residual: f64,
    /// Relative step of one extra map application at the returned `bbar`.
    pub fixed_point_residual: f64,
    pub l_causal_leak: f64,
    pub s_anticausal_leak: f64,
    pub k_causal_leak: f64,
    pub regret_sup: f64,
}

/// Direct evaluation of `Cbar (e^{-jw} I - Abar)^{-1} bbar` on the grid.
pub fn s_minus_from_bbar(bbar: &DVector<f64>, triple: &AdjointTriple, grid: &FrequencyGrid) -> Result<GridSamples> {
    let n = triple.abar.nrows();
    if bbar.len() != n {
        return Err(Error::DimensionMismatch(format!("bbar has length {}, expected {n}", bbar.len())));
    }
    let abar = to_complex(&triple.abar);
    let cbar = to_complex(&triple.cbar);
    let b = to_complex(&DMatrix::from_column_slice(n, 1, bbar.as_slice()));
    let eye = DMatrix::<Complex64>::identity(n, n);
    GridSamples::try_from_fn(*grid, cbar.nrows(), 1, |i, z| {
        let x = numeric::solve_complex(&eye * z.conj() - &abar, &b)
            .ok_or(Error::SingularResolvent { omega: grid.omega(i) })?;
        Ok(&cbar * x)
    })
}

fn n_value(s_sq: f64, gamma: f64) -> f64 {
    let root = 1.0 + (1.0 + 4.0 * s_sq / gamma).sqrt();
    0.25 * root * root
}

/// `N(w) = (1 + sqrt(1 + 4 ||S(w)||^2 / gamma))^2 / 4`.
pub fn n_from_s(s: &GridSamples, gamma: f64) -> Result<ScalarSpectrum> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig(format!("gamma must be positive, got {gamma}")));
    }
    if s.cols() != 1 {
        return Err(Error::DimensionMismatch("S must have a single column".into()));
    }
    let values = s.values().iter().map(|m| n_value(m.norm_squared(), gamma)).collect();
    ScalarSpectrum::new(*s.grid(), values)
}

fn realify(b: &[Complex64]) -> Result<DVector<f64>> {
    let re = DVector::from_iterator(b.len(), b.iter().map(|z| z.re));
    let leak = b.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    if !leak.is_finite() || leak > IMAGINARY_LEAK_TOL * re.norm().max(1.0) {
        return Err(Error::ImaginaryLeak { leak });
    }
    Ok(re)
}

/// Direct evaluation of `mean_w (I - e^{jw} Abar)^{-1} Dbar L(w)`.
pub fn bbar_from_l(l: &ScalarFactor, triple: &AdjointTriple) -> Result<DVector<f64>> {
    let n = triple.abar.nrows();
    let grid = *l.grid();
    let abar = to_complex(&triple.abar);
    let dbar = to_complex(&DMatrix::from_column_slice(n, 1, triple.dbar.as_slice()));
    let eye = DMatrix::<Complex64>::identity(n, n);
    let cols = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let x = numeric::solve_complex(&eye - &abar * grid.point(i), &dbar)
                .ok_or(Error::SingularResolvent { omega: grid.omega(i) })?;
            Ok(x * l.values()[i])
        })
        .collect::<Result<Vec<_>>>()?;
    let sums: Vec<Complex64> = (0..n)
        .map(|c| {
            let terms: Vec<Complex64> = cols.iter().map(|x| x[(c, 0)]).collect();
            numeric::pairwise_sum_complex(&terms) / grid.len() as f64
        })
        .collect();
    realify(&sums)
}

struct MapEval {
    s: Vec<Complex64>,
    n: Vec<f64>,
    l: ScalarFactor,
    next: DVector<f64>,
}

fn apply_map(ctx: &PlantContext, gamma: f64, b: &DVector<f64>) -> Result<MapEval> {
    let d = ctx.d();
    let s = ctx.s_from_bbar_fast(b.as_slice());
    let n: Vec<f64> = s.chunks(d).map(|row| n_value(row.iter().map(|z| z.norm_sqr()).sum(), gamma)).collect();
    let spec = ScalarSpectrum::new(*ctx.grid(), n.clone())?;
    let l = ctx.factorizer().factor(&spec)?;
    let next = realify(&ctx.bbar_from_l_fast(l.values()))?;
    if next.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteSample("fixed-point update"));
    }
    Ok(MapEval { s, n, l, next })
}

fn rel_step(r: &DVector<f64>, b: &DVector<f64>) -> f64 {
    r.norm() / b.norm().max(1.0)
}

/// Errors that mean the iterate ran off to where no fixed point exists.
fn as_infeasible(gamma: f64, e: Error) -> Error {
    match e {
        Error::IllConditionedSpectrum { .. } | Error::NonFiniteSample(_) | Error::NonPositiveSpectrum { .. } => {
            Error::GammaInfeasible { gamma, reason: format!("fixed-point iterate diverged ({e})") }
        }
        other => other,
    }
}

fn blowup_limit(ctx: &PlantContext) -> f64 {
    1e10 * ctx.triple().dbar.norm().max(1.0)
}

struct FixedPoint {
    b: DVector<f64>,
    iters: usize,
    history: Vec<f64>,
}

fn run_fixed_point(ctx: &PlantContext, cfg: &SynthesisConfig, init: DVector<f64>) -> Result<FixedPoint> {
    let gamma = cfg.gamma;
    let limit = blowup_limit(ctx);
    let eval = |b: &DVector<f64>| apply_map(ctx, gamma, b).map_err(|e| as_infeasible(gamma, e));
    let mut b = init;
    let mut fb = eval(&b)?.next;
    let mut history = Vec::new();
    let mut beta = cfg.damping;
    let mut prev_step: Option<DVector<f64>> = None;
    let mut newton_failures = 0usize;

    for iter in 0..cfg.max_iters {
        let r = &fb - &b;
        let step = rel_step(&r, &b);
        history.push(step);
        log::trace!("gamma {gamma:e} iter {iter} step {step:e}");
        if step < cfg.fp_tol {
            return Ok(FixedPoint { b, iters: iter, history });
        }

        let mut advanced = None;
        if cfg.method == FixedPointMethod::Newton {
            advanced = newton_step(&eval, &b, &r);
        }
        if cfg.method == FixedPointMethod::Newton {
            newton_failures = if advanced.is_some() { 0 } else { newton_failures + 1 };
            if newton_failures >= NEWTON_STALL_LIMIT {
                return Err(Error::GammaInfeasible {
                    gamma,
                    reason: format!("Newton steps stalled {newton_failures} times in a row (step {step:e})"),
                });
            }
        }
        let (b_new, fb_new) = match advanced {
            Some(pair) => pair,
            None => {
                if let Some(prev) = &prev_step {
                    if prev.dot(&r) < 0.0 {
                        beta = (beta * 0.5).max(0.1);
                    }
                }
                prev_step = Some(r.clone());
                let b_new = &b + &r * beta;
                let fb_new = eval(&b_new)?.next;
                (b_new, fb_new)
            }
        };
        if !(b_new.norm() < limit) {
            return Err(Error::GammaInfeasible {
                gamma,
                reason: format!("fixed-point iterate norm {:e} exceeded {limit:e}", b_new.norm()),
            });
        }
        b = b_new;
        fb = fb_new;
    }
    let last_step = history.last().copied().unwrap_or(f64::NAN);
    Err(Error::MaxItersExceeded { iters: cfg.max_iters, last_step, history })
}

/// One globalized Newton step on `F(b) - b`. Returns the new iterate and its
/// image, or `None` when no step along the Newton direction reduces the residual.
fn newton_step<E>(eval: &E, b: &DVector<f64>, r: &DVector<f64>) -> Option<(DVector<f64>, DVector<f64>)>
where
    E: Fn(&DVector<f64>) -> Result<MapEval> + Sync,
{
    let n = b.len();
    let fb = b + r;
    let cols: Vec<Option<DVector<f64>>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let h = 1e-7 * b[j].abs().max(1.0);
            let mut bj = b.clone();
            bj[j] += h;
            let f = eval(&bj).ok()?.next;
            Some((f - &fb) / h)
        })
        .collect();
    let mut jac = DMatrix::<f64>::zeros(n, n);
    for (j, col) in cols.into_iter().enumerate() {
        jac.set_column(j, &col?);
    }
    jac -= DMatrix::identity(n, n);
    let delta = jac.lu().solve(&(-r))?;
    if !delta.iter().all(|x| x.is_finite()) {
        return None;
    }
    let base = r.norm();
    let mut t = 1.0;
    for _ in 0..8 {
        let cand = b + &delta * t;
        if let Ok(m) = eval(&cand) {
            let rn = (&m.next - &cand).norm();
            if rn < (1.0 - 1e-4 * t) * base {
                return Some((cand, m.next));
            }
        }
        t *= 0.5;
    }
    None
}

/// Runs the fixed point at `cfg.gamma` from `Dbar` and builds `K_gamma`.
pub fn synthesize(cfg: &SynthesisConfig, ctx: &PlantContext) -> Result<(SynthesisState, ControllerSamples)> {
    synthesize_from(cfg, ctx, None)
}

/// As [`synthesize`], optionally warm-started from a previous `bbar`.
pub fn synthesize_from(
    cfg: &SynthesisConfig,
    ctx: &PlantContext,
    init: Option<&DVector<f64>>,
) -> Result<(SynthesisState, ControllerSamples)> {
    cfg.validate()?;
    let n = ctx.n();
    let init = match init {
        Some(b) if b.len() == n => b.clone(),
        Some(b) => return Err(Error::DimensionMismatch(format!("warm start has length {}, expected {n}", b.len()))),
        None => ctx.triple().dbar.clone(),
    };
    let fp = run_fixed_point(ctx, cfg, init)?;
    finalize(ctx, cfg, fp)
}

fn finalize(ctx: &PlantContext, cfg: &SynthesisConfig, fp: FixedPoint) -> Result<(SynthesisState, ControllerSamples)> {
    let gamma = cfg.gamma;
    let grid = *ctx.grid();
    let d = ctx.d();
    let m = apply_map(ctx, gamma, &fp.b).map_err(|e| as_infeasible(gamma, e))?;
    let fixed_point_residual = rel_step(&(&m.next - &fp.b), &fp.b);

    // KKT consistency: N built from this S against N built from the S that
    // the factor of N maps back to.
    let s_next = ctx.s_from_bbar_fast(m.next.as_slice());
    let kkt_residual = s_next
        .chunks(d)
        .zip(&m.n)
        .map(|(row, nv)| (n_value(row.iter().map(|z| z.norm_sqr()).sum(), gamma) - nv).abs())
        .fold(0.0, f64::max);

    let s_minus =
        GridSamples::new(grid, d, 1, m.s.chunks(d).map(|row| DMatrix::from_column_slice(d, 1, row)).collect())?;
    let nspec = ScalarSpectrum::new(grid, m.n)?;
    let lfac = m.l;

    let factors = ctx.factors();
    let k_values: Vec<DMatrix<Complex64>> = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let s = s_minus.value(i);
            let l = lfac.values()[i];
            factors.kcirc.value(i) - factors.delta_inv.value(i) * s / l
        })
        .collect();
    let k = GridSamples::new(grid, d, 1, k_values)?;
    if k.values().iter().any(|m| m.iter().any(|z| !(z.re.is_finite() && z.im.is_finite()))) {
        return Err(Error::NonFiniteSample("controller"));
    }

    let l_causal_leak = lfac.causal_leak();
    if l_causal_leak > CAUSAL_LEAK_TOL {
        return Err(Error::CausalLeakExceeded { leak: l_causal_leak, tolerance: CAUSAL_LEAK_TOL });
    }
    let s_anticausal_leak = s_minus.nonnegative_lag_fraction();
    let k_causal_leak = k.causal_leak();
    if ctx.open_loop_stable() && k_causal_leak > CAUSAL_LEAK_TOL {
        return Err(Error::CausalLeakExceeded { leak: k_causal_leak, tolerance: CAUSAL_LEAK_TOL });
    }

    let regret = regret_values(ctx, &k)?;
    let regret_sup = regret.iter().cloned().fold(0.0, f64::max);
    if !(regret_sup < gamma) {
        return Err(Error::GammaInfeasible {
            gamma,
            reason: format!("regret spectrum supremum {regret_sup:e} is not below gamma"),
        });
    }

    let state = SynthesisState {
        gamma,
        bbar: fp.b,
        s_minus,
        nspec,
        lfac,
        iters: fp.iters,
        history: fp.history,
        kkt_residual,
        fixed_point_residual,
        l_causal_leak,
        s_anticausal_leak,
        k_causal_leak,
        regret_sup,
    };
    let controller = ControllerSamples::new(k, Provenance::DrRo { gamma, radius: None }, Some(gamma));
    Ok((state, controller))
}

/// Real impulse response taps `k_0 .. k_{lags-1}` with the fraction of energy outside them.
#[derive(Debug, Clone)]
pub struct ImpulseResponse {
    pub taps: Vec<DMatrix<f64>>,
    pub tail_energy: f64,
}

impl ImpulseResponse {
    /// Scalar tap sequence of entry `(row, col)`.
    pub fn entry(&self, row: usize, col: usize) -> Vec<f64> {
        self.taps.iter().map(|m| m[(row, col)]).collect()
    }
}

pub fn impulse_response(k: &ControllerSamples, lags: usize) -> Result<ImpulseResponse> {
    impulse_response_of(&k.k, lags)
}

pub fn impulse_response_of(k: &GridSamples, lags: usize) -> Result<ImpulseResponse> {
    let n = k.grid().len();
    if lags > n / 2 {
        return Err(Error::InvalidConfig(format!("{lags} lags exceed half the grid ({})", n / 2)));
    }
    let coeffs = k.coefficients();
    let total: f64 = coeffs.iter().map(|c| c.norm_squared()).sum();
    let kept: f64 = coeffs[..lags].iter().map(|c| c.norm_squared()).sum();
    let tail_energy = if total > 0.0 { ((total - kept) / total).max(0.0) } else { 0.0 };
    let taps = coeffs[..lags].iter().map(|c| c.map(|z| z.re)).collect();
    Ok(ImpulseResponse { taps, tail_energy })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn triple(a: f64, c: f64, d: f64) -> AdjointTriple {
        AdjointTriple {
            abar: DMatrix::from_element(1, 1, a),
            cbar: DMatrix::from_element(1, 1, c),
            dbar: DVector::from_element(1, d),
        }
    }

    #[test]
    fn zero_bbar_gives_zero_s() {
        let g = FrequencyGrid::new(8).unwrap();
        let s = s_minus_from_bbar(&DVector::zeros(1), &triple(0.3, -0.7, 0.2), &g).unwrap();
        assert_eq!(s.sup_norm(), 0.0);
    }

    #[test]
    fn static_adjoint_gives_pure_advance() {
        let g = FrequencyGrid::new(8).unwrap();
        let s = s_minus_from_bbar(&DVector::from_element(1, 0.4), &triple(0.0, -0.5, 0.2), &g).unwrap();
        for i in 0..g.len() {
            let expect = g.point(i) * (-0.5 * 0.4);
            assert!((s.value(i)[(0, 0)] - expect).norm() < 1e-15);
        }
    }

    #[test]
    fn n_formula_cases() {
        let g = FrequencyGrid::new(8).unwrap();
        let zero = GridSamples::zeros(g, 2, 1);
        assert!(n_from_s(&zero, 3.0).unwrap().values().iter().all(|&v| v == 1.0));
        let gamma = 0.5;
        let s =
            GridSamples::new(g, 1, 1, vec![DMatrix::from_element(1, 1, Complex64::new(1.0, 0.0)); g.len()]).unwrap();
        let n = n_from_s(&s, gamma).unwrap();
        assert!(n.values().iter().all(|&v| (v - 4.0).abs() < 1e-14));
    }

    #[test]
    fn unit_factor_integrates_to_dbar() {
        let g = FrequencyGrid::new(8).unwrap();
        let l = crate::specfact::spectral_factor_dft(&ScalarSpectrum::constant(g, 1.0).unwrap()).unwrap();
        let b = bbar_from_l(&l, &triple(0.6, -1.0, 0.35)).unwrap();
        assert!((b[0] - 0.35).abs() < 1e-15);
        let b = bbar_from_l(&l, &triple(0.6, -1.0, 0.0)).unwrap();
        assert_eq!(b[0], 0.0);
    }

    #[test]
    fn impulse_of_constant_and_delay() {
        let g = FrequencyGrid::new(8).unwrap();
        let c =
            GridSamples::new(g, 1, 1, vec![DMatrix::from_element(1, 1, Complex64::new(0.3, 0.0)); g.len()]).unwrap();
        let ir = impulse_response_of(&c, 8).unwrap();
        assert!((ir.taps[0][(0, 0)] - 0.3).abs() < 1e-15);
        assert!(ir.taps[1..].iter().all(|t| t[(0, 0)].abs() < 1e-15));
        let delay = GridSamples::try_from_fn(g, 1, 1, |_, z| Ok(DMatrix::from_element(1, 1, z.conj()))).unwrap();
        let ir = impulse_response_of(&delay, 8).unwrap();
        assert!((ir.taps[1][(0, 0)] - 1.0).abs() < 1e-14);
        assert!(ir.taps[0][(0, 0)].abs() < 1e-14);
        assert!(impulse_response_of(&delay, 129).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(SynthesisConfig::new(0.0).validate().is_err());
        let mut c = SynthesisConfig::new(1.0);
        c.damping = 1.5;
        assert!(c.validate().is_err());
        assert!(SynthesisConfig::new(1.0).validate().is_ok());
    }
}
