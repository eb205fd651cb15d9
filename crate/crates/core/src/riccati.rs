//! LQR Riccati solution, canonical spectral factor of `I + F*F`, the
//! noncausal optimum `K_circ` and its causal/anticausal split.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{FrequencyGrid, GridSamples, WeightedPlant};
use crate::numeric::{self, to_complex};

/// Stabilizing DARE solution and the quantities derived from it.
#[derive(Debug, Clone)]
pub struct RiccatiData {
    pub p: DMatrix<f64>,
    pub k_lqr: DMatrix<f64>,
    pub a_k: DMatrix<f64>,
    pub rbpb: DMatrix<f64>,
    pub sqrt_rbpb: DMatrix<f64>,
    pub inv_sqrt_rbpb: DMatrix<f64>,
    /// `||P - Ric(P)||_F / ||P||_F`.
    pub residual: f64,
    pub iterations: usize,
}

fn ricc_map(
    p: &DMatrix<f64>,
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Option<DMatrix<f64>> {
    let rbpb = r + b.transpose() * p * b;
    let bpa = b.transpose() * p * a;
    let gain = rbpb.cholesky()?.solve(&bpa);
    let next = q + a.transpose() * p * a - bpa.transpose() * gain;
    Some(numeric::symmetric_part(&next))
}

fn dare_residual(p: &DMatrix<f64>, a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    match ricc_map(p, a, b, q, r) {
        Some(next) => (&next - p).norm() / p.norm().max(f64::MIN_POSITIVE),
        None => f64::INFINITY,
    }
}

/// Structure-preserving doubling. Returns `None` if a doubling step breaks down.
fn sda(a: &DMatrix<f64>, b: &DMatrix<f64>, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Option<(DMatrix<f64>, usize)> {
    let n = a.nrows();
    let rinv_bt = r.clone().cholesky()?.solve(&b.transpose());
    let mut ak = a.clone();
    let mut gk = numeric::symmetric_part(&(b * rinv_bt));
    let mut hk = q.clone();
    for it in 1..=64 {
        let w = DMatrix::identity(n, n) + &gk * &hk;
        let lu = w.lu();
        let wa = lu.solve(&ak)?;
        let wg = lu.solve(&gk)?;
        let a_next = &ak * &wa;
        let g_next = numeric::symmetric_part(&(&gk + &ak * wg * ak.transpose()));
        let h_next = numeric::symmetric_part(&(&hk + ak.transpose() * &hk * &wa));
        if !h_next.iter().all(|x| x.is_finite()) {
            return None;
        }
        let diff = (&h_next - &hk).norm();
        ak = a_next;
        gk = g_next;
        hk = h_next;
        if diff <= 1e-14 * hk.norm() {
            return Some((hk, it));
        }
    }
    None
}

/// Solves `P = Q + A'PA - A'PB (R + B'PB)^{-1} B'PA` for the stabilizing `P`.
pub fn solve_dare(wp: &WeightedPlant) -> Result<RiccatiData> {
    let plant = wp.plant();
    let (a, b, q, r) = (plant.a(), plant.b_u(), plant.q(), plant.r());

    let mut candidate = sda(a, b, q, r);
    if let Some((p, _)) = &candidate {
        if dare_residual(p, a, b, q, r) > 1e-10 {
            candidate = None;
        }
    }
    let (mut p, mut iterations) = match candidate {
        Some(found) => found,
        None => {
            log::debug!("doubling iteration failed, falling back to value iteration");
            let mut p = q.clone();
            let mut converged = false;
            let mut its = 0;
            for it in 1..=200_000 {
                let next = ricc_map(&p, a, b, q, r)
                    .ok_or_else(|| Error::NoStabilizingSolution("R + B'PB lost definiteness".into()))?;
                let diff = (&next - &p).norm();
                p = next;
                its = it;
                if !p.iter().all(|x| x.is_finite()) {
                    return Err(Error::NoStabilizingSolution("value iteration diverged".into()));
                }
                if diff <= 1e-14 * p.norm() {
                    converged = true;
                    break;
                }
            }
            if !converged {
                return Err(Error::NoStabilizingSolution(format!("value iteration did not converge in {its} steps")));
            }
            (p, its)
        }
    };

    // One polishing step removes the last doubling roundoff.
    if let Some(next) = ricc_map(&p, a, b, q, r) {
        p = next;
        iterations += 1;
    }
    let residual = dare_residual(&p, a, b, q, r);
    if residual > 1e-10 {
        return Err(Error::NoStabilizingSolution(format!("DARE residual {residual:e}")));
    }

    let rbpb = numeric::symmetric_part(&(r + b.transpose() * &p * b));
    let k_lqr = rbpb
        .clone()
        .cholesky()
        .ok_or_else(|| Error::NoStabilizingSolution("R + B'PB not positive definite".into()))?
        .solve(&(b.transpose() * &p * a));
    let a_k = a - b * &k_lqr;
    let rho = numeric::spectral_radius(&a_k);
    if rho >= 1.0 {
        return Err(Error::NoStabilizingSolution(format!("closed-loop spectral radius {rho} >= 1")));
    }
    let sqrt_rbpb = numeric::pd_sqrt(&rbpb, "R + B'PB")?;
    let inv_sqrt_rbpb = numeric::symmetric_part(
        &sqrt_rbpb.clone().try_inverse().ok_or(Error::NotPositiveDefinite { name: "R + B'PB" })?,
    );
    Ok(RiccatiData { p, k_lqr, a_k, rbpb, sqrt_rbpb, inv_sqrt_rbpb, residual, iterations })
}

/// State-space data of the strictly anticausal part of `Delta K_circ`.
#[derive(Debug, Clone)]
pub struct AdjointTriple {
    pub abar: DMatrix<f64>,
    pub cbar: DMatrix<f64>,
    pub dbar: DVector<f64>,
}

pub fn adjoint_triple(rd: &RiccatiData, wp: &WeightedPlant) -> AdjointTriple {
    let plant = wp.plant();
    let abar = rd.a_k.transpose();
    let dbar = (&abar * &rd.p * plant.b_w()).column(0).into_owned();
    let cbar = -(&rd.inv_sqrt_rbpb * plant.b_u().transpose());
    AdjointTriple { abar, cbar, dbar }
}

/// Grid samples of the canonical factor and the noncausal decomposition,
/// plus the residuals of the identities that pin their conventions.
#[derive(Debug, Clone)]
pub struct CanonicalFactors {
    pub delta: GridSamples,
    pub delta_inv: GridSamples,
    pub kcirc: GridSamples,
    pub tpart: GridSamples,
    pub upart: GridSamples,
    pub inverse_residual: f64,
    pub spectral_residual: f64,
    pub decomposition_residual: f64,
}

struct PointFactors {
    delta: DMatrix<Complex64>,
    delta_inv: DMatrix<Complex64>,
    kcirc: DMatrix<Complex64>,
    t: DMatrix<Complex64>,
    u: DMatrix<Complex64>,
    inverse_err: f64,
    spectral_err: f64,
    decomposition_err: f64,
    dk_norm: f64,
}

pub fn canonical_factors(rd: &RiccatiData, wp: &WeightedPlant, grid: &FrequencyGrid) -> Result<CanonicalFactors> {
    let triple = adjoint_triple(rd, wp);
    canonical_factors_with(rd, &triple, wp, grid)
}

pub fn canonical_factors_with(
    rd: &RiccatiData,
    triple: &AdjointTriple,
    wp: &WeightedPlant,
    grid: &FrequencyGrid,
) -> Result<CanonicalFactors> {
    let plant = wp.plant();
    let (n, d) = (plant.n(), plant.d());
    let c = |m: &DMatrix<f64>| to_complex(m);
    let a = c(plant.a());
    let a_k = c(&rd.a_k);
    let abar = c(&triple.abar);
    let b_u = c(plant.b_u());
    let b_w = c(plant.b_w());
    let mut rhs = DMatrix::<Complex64>::zeros(n, d + 1);
    rhs.view_mut((0, 0), (n, d)).copy_from(&b_u);
    rhs.view_mut((0, d), (n, 1)).copy_from(&b_w);
    let dbar = to_complex(&DMatrix::from_column_slice(n, 1, triple.dbar.as_slice()));
    let cbar = c(&triple.cbar);
    let cbar_p = c(&(&triple.cbar * &rd.p));
    let k_lqr = c(&rd.k_lqr);
    let sqrt_q = c(wp.sqrt_q());
    let sqrt_r = c(wp.sqrt_r());
    let inv_sqrt_r = c(wp.inv_sqrt_r());
    let sqrt_rbpb = c(&rd.sqrt_rbpb);
    let inv_sqrt_rbpb = c(&rd.inv_sqrt_rbpb);
    let eye_n = DMatrix::<Complex64>::identity(n, n);
    let eye_d = DMatrix::<Complex64>::identity(d, d);

    let points = (0..grid.len())
        .into_par_iter()
        .map(|i| -> Result<PointFactors> {
            let z = grid.point(i);
            let singular = || Error::SingularResolvent { omega: grid.omega(i) };
            let x = numeric::solve_complex(&eye_n * z - &a, &rhs).ok_or_else(singular)?;
            let xu = x.columns(0, d).into_owned();
            let xw = x.columns(d, 1).into_owned();
            let yu = numeric::solve_complex(&eye_n * z - &a_k, &b_u).ok_or_else(singular)?;
            let tv = numeric::solve_complex(&eye_n * z.conj() - &abar, &dbar).ok_or_else(singular)?;

            let f = &sqrt_q * &xu * &inv_sqrt_r;
            let g = &sqrt_q * &xw;
            let delta = &sqrt_rbpb * (&eye_d + &k_lqr * &xu) * &inv_sqrt_r;
            let delta_inv = &sqrt_r * (&eye_d - &k_lqr * &yu) * &inv_sqrt_rbpb;
            let fhf = &eye_d + f.adjoint() * &f;
            let kcirc = -numeric::solve_complex(fhf.clone(), &(f.adjoint() * &g)).ok_or_else(singular)?;
            let t = &cbar * tv;
            let u = &cbar_p * (&a * &xw + &b_w);

            let inverse_err = (&delta * &delta_inv - &eye_d).norm() / (delta.norm() * delta_inv.norm()).max(1.0);
            let spectral_err = (delta.adjoint() * &delta - &fhf).norm() / fhf.norm();
            let dk = &delta * &kcirc;
            let decomposition_err = (&dk - &t - &u).norm();
            Ok(PointFactors {
                dk_norm: dk.norm(),
                delta,
                delta_inv,
                kcirc,
                t,
                u,
                inverse_err,
                spectral_err,
                decomposition_err,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let max_of = |f: fn(&PointFactors) -> f64| points.iter().map(f).fold(0.0, f64::max);
    let inverse_residual = max_of(|p| p.inverse_err);
    let spectral_residual = max_of(|p| p.spectral_err);
    let dk_scale = max_of(|p| p.dk_norm).max(1.0);
    let decomposition_residual = max_of(|p| p.decomposition_err) / dk_scale;

    for (identity, residual, tolerance) in [
        ("Delta * DeltaInv = I", inverse_residual, 1e-10),
        ("Delta* Delta = I + F*F", spectral_residual, 1e-8),
        ("Delta Kcirc = T + U", decomposition_residual, 1e-6),
    ] {
        if !(residual <= tolerance) {
            return Err(Error::FactorizationIdentityViolated { identity, residual, tolerance });
        }
    }

    let mut delta = Vec::with_capacity(points.len());
    let mut delta_inv = Vec::with_capacity(points.len());
    let mut kcirc = Vec::with_capacity(points.len());
    let mut tpart = Vec::with_capacity(points.len());
    let mut upart = Vec::with_capacity(points.len());
    for p in points {
        delta.push(p.delta);
        delta_inv.push(p.delta_inv);
        kcirc.push(p.kcirc);
        tpart.push(p.t);
        upart.push(p.u);
    }
    Ok(CanonicalFactors {
        delta: GridSamples::new(*grid, d, d, delta)?,
        delta_inv: GridSamples::new(*grid, d, d, delta_inv)?,
        kcirc: GridSamples::new(*grid, d, 1, kcirc)?,
        tpart: GridSamples::new(*grid, d, 1, tpart)?,
        upart: GridSamples::new(*grid, d, 1, upart)?,
        inverse_residual,
        spectral_residual,
        decomposition_residual,
    })
}
