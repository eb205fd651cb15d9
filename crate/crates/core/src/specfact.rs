//! Scalar cepstral spectral factorization on the DFT grid.

use std::io::Write;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::{fmt17, FrequencyGrid};
use crate::numeric::{self, Dft};

/// Smallest accepted `min N / max N`; below this the log-spectrum loses its decay.
pub const DYNAMIC_RANGE_GUARD: f64 = 1e-12;

/// Positive, even, real spectrum sampled on a [`FrequencyGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarSpectrum {
    grid: FrequencyGrid,
    values: Vec<f64>,
}

impl ScalarSpectrum {
    pub fn new(grid: FrequencyGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} spectrum samples for a grid of {}", values.len(), grid.len())));
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(Error::NonFiniteSample("spectrum"));
            }
            if value <= 0.0 {
                return Err(Error::NonPositiveSpectrum { index, value });
            }
        }
        let mut error: f64 = 0.0;
        for i in 0..values.len() {
            let j = grid.mirror(i);
            let e = (values[i] - values[j]).abs() / values[i].max(values[j]);
            error = error.max(e);
        }
        if error > 1e-10 {
            return Err(Error::AsymmetricSpectrum { error });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: FrequencyGrid, c: f64) -> Result<Self> {
        Self::new(grid, vec![c; grid.len()])
    }

    pub fn from_fn(grid: FrequencyGrid, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, grid.omegas().into_iter().map(f).collect())
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(0.0, f64::max)
    }

    pub fn mean(&self) -> f64 {
        numeric::pairwise_mean(&self.values)
    }
}

/// Samples of the causal, causally invertible factor `L` with `|L|^2 = N`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarFactor {
    grid: FrequencyGrid,
    values: Vec<Complex64>,
}

impl ScalarFactor {
    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn values(&self) -> &[Complex64] {
        &self.values
    }

    /// Impulse coefficients in DFT index order.
    pub fn coefficients(&self) -> Vec<Complex64> {
        let mut buf = self.values.clone();
        Dft::new(buf.len()).inverse(&mut buf);
        buf
    }

    /// Relative energy at negative lags.
    pub fn causal_leak(&self) -> f64 {
        leak_of(&self.coefficients())
    }

    pub fn write_csv<W: Write>(&self, spec: &ScalarSpectrum, mut w: W) -> Result<()> {
        self.grid.ensure_same(spec.grid())?;
        writeln!(w, "omega,N,abs_L_sq,arg_L")?;
        for (i, (l, n)) in self.values.iter().zip(spec.values()).enumerate() {
            writeln!(w, "{},{},{},{}", fmt17(self.grid.omega(i)), fmt17(*n), fmt17(l.norm_sqr()), fmt17(l.arg()))?;
        }
        Ok(())
    }
}

fn leak_of(coeffs: &[Complex64]) -> f64 {
    let n = coeffs.len();
    let mut total = 0.0;
    let mut neg = 0.0;
    for (t, c) in coeffs.iter().enumerate() {
        let e = c.norm_sqr();
        total += e;
        if numeric::lag_of(t, n) < 0 {
            neg += e;
        }
    }
    if total == 0.0 {
        0.0
    } else {
        (neg / total).sqrt()
    }
}

/// Reusable factorizer holding the DFT plans for one grid.
#[derive(Debug, Clone)]
pub struct Factorizer {
    grid: FrequencyGrid,
    dft: Dft,
}

impl Factorizer {
    pub fn new(grid: FrequencyGrid) -> Self {
        Self { grid, dft: Dft::new(grid.len()) }
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    /// Cepstral factorization: keep the causal half of the log-spectrum's
    /// Fourier series (end points halved) and exponentiate.
    pub fn factor(&self, spec: &ScalarSpectrum) -> Result<ScalarFactor> {
        self.grid.ensure_same(spec.grid())?;
        let ratio = spec.min() / spec.max();
        if ratio <= DYNAMIC_RANGE_GUARD {
            return Err(Error::IllConditionedSpectrum { ratio });
        }
        let n = self.grid.len();
        let mut buf: Vec<Complex64> = spec.values().iter().map(|v| Complex64::new(v.ln(), 0.0)).collect();
        self.dft.inverse(&mut buf);
        let half = n / 2;
        buf[0] *= 0.5;
        buf[half] *= 0.5;
        for b in buf.iter_mut().skip(half + 1) {
            *b = Complex64::new(0.0, 0.0);
        }
        // The log-spectrum is real and even, so its cepstrum is real.
        for b in buf.iter_mut() {
            b.im = 0.0;
        }
        self.dft.forward(&mut buf);
        for b in buf.iter_mut() {
            *b = b.exp();
        }
        if buf.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::NonFiniteSample("spectral factor"));
        }
        Ok(ScalarFactor { grid: self.grid, values: buf })
    }
}

pub fn spectral_factor_dft(spec: &ScalarSpectrum) -> Result<ScalarFactor> {
    Factorizer::new(*spec.grid()).factor(spec)
}

/// `(max |(|L|^2 - N)| / N, causal leak of L)`.
pub fn factor_residuals(spec: &ScalarSpectrum, fac: &ScalarFactor) -> Result<(f64, f64)> {
    spec.grid().ensure_same(fac.grid())?;
    let magnitude =
        spec.values().iter().zip(fac.values()).map(|(n, l)| (l.norm_sqr() - n).abs() / n).fold(0.0, f64::max);
    Ok((magnitude, fac.causal_leak()))
}
