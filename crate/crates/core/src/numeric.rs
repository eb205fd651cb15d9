//! Small numerical utilities shared across modules: order-fixed reductions,
//! dense linear algebra helpers and DFT wrappers.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};

/// Pairwise summation. The reduction tree depends only on the slice length,
/// so results are reproducible regardless of how the inputs were produced.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 16;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn pairwise_mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    pairwise_sum(xs) / xs.len() as f64
}

pub fn pairwise_sum_complex(xs: &[Complex64]) -> Complex64 {
    const BLOCK: usize = 16;
    if xs.len() <= BLOCK {
        return xs.iter().sum();
    }
    let mid = xs.len() / 2;
    pairwise_sum_complex(&xs[..mid]) + pairwise_sum_complex(&xs[mid..])
}

pub fn to_complex(m: &DMatrix<f64>) -> DMatrix<Complex64> {
    m.map(|x| Complex64::new(x, 0.0))
}

pub fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    a.complex_eigenvalues().iter().map(|l| l.norm()).fold(0.0, f64::max)
}

/// Symmetric positive-definite square root via eigendecomposition.
///
/// Eigenvalues are clamped below at 1e-14; clamping a value more negative
/// than -1e-10 relative to the largest eigenvalue is an error.
pub fn pd_sqrt(m: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>> {
    let sym = symmetrize(m, name)?;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return Err(Error::NotPositiveDefinite { name });
    }
    let mut roots = eig.eigenvalues.clone();
    for l in roots.iter_mut() {
        if *l < -1e-10 * max {
            return Err(Error::NotPositiveDefinite { name });
        }
        *l = l.max(1e-14).sqrt();
    }
    let v = &eig.eigenvectors;
    let s = v * DMatrix::from_diagonal(&roots) * v.transpose();
    Ok(symmetric_part(&s))
}

/// Checks symmetry to 1e-10 relative and returns the exact symmetric part.
pub fn symmetrize(m: &DMatrix<f64>, name: &'static str) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::DimensionMismatch(format!("{name} must be square")));
    }
    let scale = m.norm().max(f64::MIN_POSITIVE);
    if (m - m.transpose()).norm() > 1e-10 * scale {
        return Err(Error::NotPositiveDefinite { name });
    }
    Ok(symmetric_part(m))
}

pub fn symmetric_part(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Smallest eigenvalue over largest eigenvalue of a symmetric matrix.
pub fn min_eig_ratio(m: &DMatrix<f64>) -> f64 {
    let eig = SymmetricEigen::new(symmetric_part(m));
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    if max <= 0.0 {
        return f64::NEG_INFINITY;
    }
    min / max
}

/// Solves `m x = rhs` by LU, refusing near-singular pivots.
pub fn solve_complex(m: DMatrix<Complex64>, rhs: &DMatrix<Complex64>) -> Option<DMatrix<Complex64>> {
    let lu = m.lu();
    let u = lu.u();
    let diag: Vec<f64> = (0..u.nrows()).map(|i| u[(i, i)].norm()).collect();
    let max = diag.iter().cloned().fold(0.0, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(max > 0.0) || min <= 1e-13 * max {
        return None;
    }
    let x = lu.solve(rhs)?;
    if x.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        Some(x)
    } else {
        None
    }
}

pub fn adjoint(m: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    m.adjoint()
}

/// Cached forward/inverse plans for one transform length.
#[derive(Clone)]
pub struct Dft {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Dft {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dft").field("len", &self.len).finish()
    }
}

impl Dft {
    pub fn new(len: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { len, forward: planner.plan_fft_forward(len), inverse: planner.plan_fft_inverse(len) }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In place `X_n = sum_t x_t e^{-j 2 pi n t / N}`.
    pub fn forward(&self, buf: &mut [Complex64]) {
        self.forward.process(buf);
    }

    /// In place `x_t = (1/N) sum_n X_n e^{+j 2 pi n t / N}`.
    pub fn inverse(&self, buf: &mut [Complex64]) {
        self.inverse.process(buf);
        let scale = 1.0 / self.len as f64;
        for z in buf.iter_mut() {
            *z *= scale;
        }
    }
}

/// Signed lag of DFT index `t` for length `n`: indices above `n/2` are
/// negative lags (positive powers of `e^{jw}`); index `n/2` counts as positive.
pub fn lag_of(t: usize, n: usize) -> i64 {
    if t <= n / 2 {
        t as i64
    } else {
        t as i64 - n as i64
    }
}

pub fn index_of_lag(lag: i64, n: usize) -> usize {
    lag.rem_euclid(n as i64) as usize
}
