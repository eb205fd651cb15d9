//! Shared fixtures and independent reference computations for the
//! integration tests. Nothing here calls the library's factorization,
//! fixed-point or dual solvers; the oracles work from plant matrices and
//! plain dense linear algebra.

#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::PathBuf;

use drro_core::{load_plant, FrequencyGrid, GridSamples, PlantContext, PlantModel};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

pub fn plant(name: &str) -> PlantModel {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../plants").join(format!("{name}.toml"));
    load_plant(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn context(name: &str, k: u32) -> PlantContext {
    PlantContext::new(plant(name), FrequencyGrid::new(k).unwrap()).unwrap()
}

pub fn plant_from(a: &[f64], n: usize, b_u: &[f64], d: usize, b_w: &[f64], q: &[f64], r: &[f64]) -> PlantModel {
    PlantModel::new(
        DMatrix::from_row_slice(n, n, a),
        DMatrix::from_row_slice(n, d, b_u),
        DMatrix::from_row_slice(n, 1, b_w),
        DMatrix::from_row_slice(n, n, q),
        DMatrix::from_row_slice(d, d, r),
    )
    .unwrap()
}

/// Symmetric square root by eigendecomposition.
pub fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let e = SymmetricEigen::new(m.clone());
    let s = DMatrix::from_diagonal(&e.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &e.eigenvectors * s * e.eigenvectors.transpose()
}

fn cplx(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|v| Complex64::new(v, 0.0))
}

/// Weighted plant responses at `z = e^{jw}`, computed from the raw matrices:
/// `F = Q^{1/2} (zI - A)^{-1} B_u R^{-1/2}` and `G = Q^{1/2} (zI - A)^{-1} B_w`.
pub fn responses_at(p: &PlantModel, w: f64) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let n = p.n();
    let z = Complex64::from_polar(1.0, w);
    let sqrt_q = cplx(&sym_sqrt(p.q()));
    let inv_sqrt_r = cplx(&sym_sqrt(p.r()).try_inverse().unwrap());
    let res = (DMatrix::<Complex64>::identity(n, n) * z - cplx(p.a())).try_inverse().unwrap();
    let f = &sqrt_q * &res * cplx(p.b_u()) * inv_sqrt_r;
    let g = &sqrt_q * &res * cplx(p.b_w());
    (f, g)
}

/// Clairvoyant optimum `-(I + F*F)^{-1} F* G` at one frequency.
pub fn kcirc_at(p: &PlantModel, w: f64) -> DMatrix<Complex64> {
    let (f, g) = responses_at(p, w);
    let fh = f.adjoint();
    let m = DMatrix::<Complex64>::identity(p.d(), p.d()) + &fh * &f;
    -(m.try_inverse().unwrap() * fh * g)
}

/// Regret density `(K - K0)* (I + F*F) (K - K0)` of a controller sample.
pub fn regret_at(p: &PlantModel, w: f64, k: &DMatrix<Complex64>) -> f64 {
    let (f, _) = responses_at(p, w);
    let e = k - kcirc_at(p, w);
    let m = DMatrix::<Complex64>::identity(p.d(), p.d()) + f.adjoint() * &f;
    (e.adjoint() * m * e)[(0, 0)].re
}

/// Coefficient of `e^{-j w lag}` in the Fourier series of sampled values,
/// by direct summation.
pub fn lag_coefficient(samples: &[Complex64], lag: i64) -> Complex64 {
    let n = samples.len();
    let mut acc = Complex64::new(0.0, 0.0);
    for (i, s) in samples.iter().enumerate() {
        let w = 2.0 * PI * i as f64 / n as f64;
        acc += s * Complex64::from_polar(1.0, w * lag as f64);
    }
    acc / n as f64
}

/// Entry `(row, 0)` of a matrix-valued sample set.
pub fn entry(g: &GridSamples, row: usize) -> Vec<Complex64> {
    g.values().iter().map(|m| m[(row, 0)]).collect()
}

/// Feasibility threshold from the Hankel operator of the anticausal part of
/// `X = Delta K0`: the squared largest singular value of the block Hankel
/// matrix `H[i][j] = x_{-(i+j+1)}`.
pub fn hankel_gamma_ro(x: &GridSamples, lags: usize) -> f64 {
    let d = x.rows();
    let coeffs: Vec<Vec<Complex64>> =
        (1..=2 * lags as i64).map(|l| (0..d).map(|r| lag_coefficient(&entry(x, r), -l)).collect()).collect();
    let mut h = DMatrix::<f64>::zeros(d * lags, lags);
    for i in 0..lags {
        for j in 0..lags {
            for r in 0..d {
                h[(i * d + r, j)] = coeffs[i + j][r].re;
            }
        }
    }
    let s = h.singular_values();
    let top = s.iter().cloned().fold(0.0, f64::max);
    top * top
}

/// Finite-horizon dual of the worst-case expected regret for a symmetric
/// Toeplitz regret matrix built from the autocorrelation `c_0 .. c_{T-1}`:
/// `min_{g > lambda_max} g r^2 + (1/T) sum_i lambda_i g / (g - lambda_i)`,
/// found by bisection on the (monotone) derivative.
pub fn finite_horizon_dual(autocorr: &[f64], r: f64) -> (f64, f64) {
    let t = autocorr.len();
    let c = DMatrix::from_fn(t, t, |i, j| autocorr[i.abs_diff(j)]);
    let lambda = SymmetricEigen::new(c).eigenvalues;
    let lmax = lambda.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let deriv = |g: f64| r * r - lambda.iter().map(|l| (l / (g - l)).powi(2)).sum::<f64>() / t as f64;
    let objective = |g: f64| g * r * r + lambda.iter().map(|l| l * g / (g - l)).sum::<f64>() / t as f64;
    if lmax <= 0.0 {
        return (0.0, 0.0);
    }
    let mut lo = lmax * (1.0 + 1e-15);
    let mut hi = 2.0 * lmax;
    while deriv(hi) < 0.0 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if deriv(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let g = 0.5 * (lo + hi);
    (objective(g), g)
}

/// Closed-form dual of a constant regret spectrum: `gamma* = c (1 + r) / r`,
/// value `c (1 + r)^2`.
pub fn constant_dual(c: f64, r: f64) -> (f64, f64) {
    (c * (1.0 + r) * (1.0 + r), c * (1.0 + r) / r)
}

/// Tiny deterministic generator so oracles do not depend on the library's RNG choices.
pub struct Lcg(u64);

impl Lcg {
    pub fn new(seed: u64) -> Self {
        Self(seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407))
    }
    pub fn uniform(&mut self) -> f64 {
        self.0 = self.0.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((self.0 >> 11) as f64) / ((1u64 << 53) as f64)
    }
    pub fn normal(&mut self) -> f64 {
        let u = self.uniform().max(1e-300);
        let v = self.uniform();
        (-2.0 * u.ln()).sqrt() * (2.0 * PI * v).cos()
    }
}
