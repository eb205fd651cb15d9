//! Plant description, frequency grid and sampled transfer objects.
//!
//! Every frequency-domain object in this crate lives in weighted coordinates:
//! the state is scaled by `Q^{1/2}` and the input by `R^{1/2}` once, at
//! [`WeightedPlant`] construction, so the quadratic cost becomes a plain
//! squared norm of the closed-loop response.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numeric::{self, Dft};

/// Discrete-time LTI plant `x_{t+1} = A x_t + B_u u_t + B_w w_t` with a
/// quadratic stage cost `x'Qx + u'Ru`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    a: DMatrix<f64>,
    b_u: DMatrix<f64>,
    b_w: DMatrix<f64>,
    q: DMatrix<f64>,
    r: DMatrix<f64>,
}

impl PlantModel {
    pub fn new(
        a: DMatrix<f64>,
        b_u: DMatrix<f64>,
        b_w: DMatrix<f64>,
        q: DMatrix<f64>,
        r: DMatrix<f64>,
    ) -> Result<Self> {
        let n = a.nrows();
        if n == 0 || !a.is_square() {
            return Err(Error::DimensionMismatch("A must be square and non-empty".into()));
        }
        if b_u.nrows() != n {
            return Err(Error::DimensionMismatch(format!("B_u has {} rows, A is {n}x{n}", b_u.nrows())));
        }
        if b_u.ncols() == 0 {
            return Err(Error::DimensionMismatch("B_u must have at least one column (d >= 1)".into()));
        }
        if b_w.nrows() != n {
            return Err(Error::DimensionMismatch(format!("B_w has {} rows, A is {n}x{n}", b_w.nrows())));
        }
        if b_w.ncols() != 1 {
            return Err(Error::DisturbanceNotScalar { p: b_w.ncols() });
        }
        if q.shape() != (n, n) {
            return Err(Error::DimensionMismatch(format!("Q must be {n}x{n}")));
        }
        let d = b_u.ncols();
        if r.shape() != (d, d) {
            return Err(Error::DimensionMismatch(format!("R must be {d}x{d}")));
        }
        let all_finite = [&a, &b_u, &b_w, &q, &r].iter().all(|m| m.iter().all(|x| x.is_finite()));
        if !all_finite {
            return Err(Error::Parse("plant matrices contain non-finite entries".into()));
        }
        for (m, name) in [(&q, "Q"), (&r, "R")] {
            numeric::symmetrize(m, name)?;
            if numeric::min_eig_ratio(m) <= 1e-14 {
                return Err(Error::NotPositiveDefinite { name });
            }
        }
        check_stabilizable(&a, &b_u, "A, B_u")?;
        check_stabilizable(&a, &b_w, "A, B_w")?;
        Ok(Self { a, b_u, b_w, q, r })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b_u(&self) -> &DMatrix<f64> {
        &self.b_u
    }
    pub fn b_w(&self) -> &DMatrix<f64> {
        &self.b_w
    }
    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }
    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    pub fn d(&self) -> usize {
        self.b_u.ncols()
    }
    pub fn p(&self) -> usize {
        self.b_w.ncols()
    }

    /// SHA-256 over the shapes and IEEE bit patterns of all matrices.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for m in [&self.a, &self.b_u, &self.b_w, &self.q, &self.r] {
            h.update((m.nrows() as u64).to_le_bytes());
            h.update((m.ncols() as u64).to_le_bytes());
            for i in 0..m.nrows() {
                for j in 0..m.ncols() {
                    h.update(m[(i, j)].to_bits().to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }
}

/// PBH test: every eigenvalue of `A` with modulus >= 1 must be controllable.
fn check_stabilizable(a: &DMatrix<f64>, b: &DMatrix<f64>, pair: &'static str) -> Result<()> {
    let n = a.nrows();
    let scale = a.norm().max(b.norm()).max(1.0);
    for lambda in a.complex_eigenvalues().iter() {
        if lambda.norm() < 1.0 - 1e-12 {
            continue;
        }
        let mut m = DMatrix::<Complex64>::zeros(n, n + b.ncols());
        for i in 0..n {
            for j in 0..n {
                m[(i, j)] = -Complex64::new(a[(i, j)], 0.0);
            }
            m[(i, i)] += lambda;
            for j in 0..b.ncols() {
                m[(i, n + j)] = Complex64::new(b[(i, j)], 0.0);
            }
        }
        let sv = m.singular_values();
        let smin = sv.iter().cloned().fold(f64::INFINITY, f64::min);
        if smin <= 1e-7 * scale {
            return Err(Error::NotStabilizable { pair, eigenvalue: format!("{lambda}") });
        }
    }
    Ok(())
}

/// Reads a plant description from a TOML file with keys `A`, `B_u`, `B_w`,
/// `Q`, `R`, each a rectangular array of rows.
pub fn load_plant(path: impl AsRef<Path>) -> Result<PlantModel> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    parse_plant(&text)
}

pub fn parse_plant(text: &str) -> Result<PlantModel> {
    let table: toml::Table = text.parse().map_err(|e| Error::Parse(format!("{e}")))?;
    let get = |key: &str| -> Result<DMatrix<f64>> {
        let value = table.get(key).ok_or_else(|| Error::Parse(format!("missing key `{key}`")))?;
        matrix_from_toml(key, value)
    };
    PlantModel::new(get("A")?, get("B_u")?, get("B_w")?, get("Q")?, get("R")?)
}

pub(crate) fn matrix_from_toml(key: &str, value: &toml::Value) -> Result<DMatrix<f64>> {
    let rows = value.as_array().ok_or_else(|| Error::Parse(format!("`{key}` must be an array of rows")))?;
    if rows.is_empty() {
        return Err(Error::Parse(format!("`{key}` is empty")));
    }
    let mut data = Vec::new();
    let mut ncols = None;
    for row in rows {
        let row = row.as_array().ok_or_else(|| Error::Parse(format!("`{key}` rows must be arrays")))?;
        match ncols {
            None => ncols = Some(row.len()),
            Some(c) if c != row.len() => return Err(Error::DimensionMismatch(format!("`{key}` is not rectangular"))),
            _ => {}
        }
        for x in row {
            let v = match x {
                toml::Value::Float(f) => *f,
                toml::Value::Integer(i) => *i as f64,
                _ => return Err(Error::Parse(format!("`{key}` entries must be numbers"))),
            };
            data.push(v);
        }
    }
    Ok(DMatrix::from_row_slice(rows.len(), ncols.unwrap_or(0), &data))
}

/// `N = 2^k` equally spaced angles `w_n = 2 pi n / N` on `[0, 2 pi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrequencyGrid {
    k: u32,
}

impl FrequencyGrid {
    pub const MIN_K: u32 = 8;
    pub const MAX_K: u32 = 20;
    pub const DEFAULT_K: u32 = 12;

    pub fn new(k: u32) -> Result<Self> {
        if !(Self::MIN_K..=Self::MAX_K).contains(&k) {
            return Err(Error::InvalidConfig(format!(
                "grid exponent k = {k} outside [{}, {}]",
                Self::MIN_K,
                Self::MAX_K
            )));
        }
        Ok(Self { k })
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn len(&self) -> usize {
        1usize << self.k
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn omega(&self, i: usize) -> f64 {
        2.0 * PI * i as f64 / self.len() as f64
    }

    pub fn omegas(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.omega(i)).collect()
    }

    /// `e^{j w_i}`.
    pub fn point(&self, i: usize) -> Complex64 {
        Complex64::from_polar(1.0, self.omega(i))
    }

    /// Index of `2 pi - w_i`.
    pub fn mirror(&self, i: usize) -> usize {
        (self.len() - i) % self.len()
    }

    pub fn ensure_same(&self, other: &FrequencyGrid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("grid k = {} vs k = {}", self.k, other.k)));
        }
        Ok(())
    }
}

/// Samples of a matrix-valued transfer function at every grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSamples {
    grid: FrequencyGrid,
    rows: usize,
    cols: usize,
    values: Vec<DMatrix<Complex64>>,
}

impl GridSamples {
    pub fn new(grid: FrequencyGrid, rows: usize, cols: usize, values: Vec<DMatrix<Complex64>>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!("{} samples for a grid of {}", values.len(), grid.len())));
        }
        if values.iter().any(|m| m.shape() != (rows, cols)) {
            return Err(Error::DimensionMismatch(format!("samples must all be {rows}x{cols}")));
        }
        Ok(Self { grid, rows, cols, values })
    }

    pub fn zeros(grid: FrequencyGrid, rows: usize, cols: usize) -> Self {
        Self { grid, rows, cols, values: vec![DMatrix::zeros(rows, cols); grid.len()] }
    }

    /// Builds samples from a per-point closure `f(i, e^{j w_i})`, evaluated in parallel.
    pub fn try_from_fn<F>(grid: FrequencyGrid, rows: usize, cols: usize, f: F) -> Result<Self>
    where
        F: Fn(usize, Complex64) -> Result<DMatrix<Complex64>> + Sync,
    {
        let values = (0..grid.len()).into_par_iter().map(|i| f(i, grid.point(i))).collect::<Result<Vec<_>>>()?;
        Self::new(grid, rows, cols, values)
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }
    pub fn rows(&self) -> usize {
        self.rows
    }
    pub fn cols(&self) -> usize {
        self.cols
    }
    pub fn values(&self) -> &[DMatrix<Complex64>] {
        &self.values
    }
    pub fn value(&self, i: usize) -> &DMatrix<Complex64> {
        &self.values[i]
    }
    pub fn into_values(self) -> Vec<DMatrix<Complex64>> {
        self.values
    }

    pub fn ensure_compatible(&self, other: &GridSamples) -> Result<()> {
        self.grid.ensure_same(&other.grid)?;
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        Ok(())
    }

    /// Pointwise combination with another sampled object on the same grid.
    pub fn zip_map<F>(&self, other: &GridSamples, rows: usize, cols: usize, f: F) -> Result<GridSamples>
    where
        F: Fn(&DMatrix<Complex64>, &DMatrix<Complex64>) -> DMatrix<Complex64> + Sync,
    {
        self.grid.ensure_same(&other.grid)?;
        let values = self.values.par_iter().zip(other.values.par_iter()).map(|(a, b)| f(a, b)).collect();
        GridSamples::new(self.grid, rows, cols, values)
    }

    /// `sup_w ||X(w) - Y(w)||_F`.
    pub fn sup_distance(&self, other: &GridSamples) -> Result<f64> {
        self.ensure_compatible(other)?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max))
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|m| m.norm()).fold(0.0, f64::max)
    }

    /// `max_w ||X(2 pi - w) - conj(X(w))||_F`.
    pub fn conjugate_symmetry_error(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| {
                let j = self.grid.mirror(i);
                (&self.values[j] - self.values[i].map(|z| z.conj())).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Matrix impulse coefficients indexed by DFT position: entry `t` is the
    /// coefficient of `e^{-j w t}` for `t <= N/2` and of `e^{-j w (t - N)}` above.
    pub fn coefficients(&self) -> Vec<DMatrix<Complex64>> {
        let n = self.grid.len();
        let dft = Dft::new(n);
        let mut out = vec![DMatrix::zeros(self.rows, self.cols); n];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        for r in 0..self.rows {
            for c in 0..self.cols {
                for (b, v) in buf.iter_mut().zip(&self.values) {
                    *b = v[(r, c)];
                }
                dft.inverse(&mut buf);
                for (o, b) in out.iter_mut().zip(&buf) {
                    o[(r, c)] = *b;
                }
            }
        }
        out
    }

    /// Relative energy at negative lags (positive powers of `e^{jw}`).
    pub fn causal_leak(&self) -> f64 {
        self.lag_energy_fraction(|lag| lag < 0)
    }

    /// Relative energy at lags `>= 0`; zero for strictly anticausal objects.
    pub fn nonnegative_lag_fraction(&self) -> f64 {
        self.lag_energy_fraction(|lag| lag >= 0)
    }

    fn lag_energy_fraction(&self, select: impl Fn(i64) -> bool) -> f64 {
        let n = self.grid.len();
        let coeffs = self.coefficients();
        let mut total = 0.0;
        let mut picked = 0.0;
        for (t, c) in coeffs.iter().enumerate() {
            let e = c.norm_squared();
            total += e;
            if select(numeric::lag_of(t, n)) {
                picked += e;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            (picked / total).sqrt()
        }
    }

    /// Frobenius norm of the impulse coefficient at `lag`.
    pub fn lag_coefficient_norm(&self, lag: i64) -> f64 {
        let n = self.grid.len();
        self.coefficients()[numeric::index_of_lag(lag, n)].norm()
    }

    /// CSV with columns `omega, re_i_j, im_i_j, ...` in row-major entry order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("omega");
        for r in 0..self.rows {
            for c in 0..self.cols {
                header.push_str(&format!(",re_{r}_{c},im_{r}_{c}"));
            }
        }
        writeln!(w, "{header}")?;
        for (i, m) in self.values.iter().enumerate() {
            let mut line = fmt17(self.grid.omega(i));
            for r in 0..self.rows {
                for c in 0..self.cols {
                    line.push(',');
                    line.push_str(&fmt17(m[(r, c)].re));
                    line.push(',');
                    line.push_str(&fmt17(m[(r, c)].im));
                }
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }
}

/// Fixed 17-significant-digit float formatting used by all CSV outputs.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// Plant plus the square roots that move it to weighted coordinates.
#[derive(Debug, Clone)]
pub struct WeightedPlant {
    plant: PlantModel,
    sqrt_q: DMatrix<f64>,
    sqrt_r: DMatrix<f64>,
    inv_sqrt_r: DMatrix<f64>,
}

impl WeightedPlant {
    pub fn new(plant: PlantModel) -> Result<Self> {
        let sqrt_q = numeric::pd_sqrt(plant.q(), "Q")?;
        let sqrt_r = numeric::pd_sqrt(plant.r(), "R")?;
        for (s, m, name) in [(&sqrt_q, plant.q(), "Q"), (&sqrt_r, plant.r(), "R")] {
            if (s * s - m).norm() > 1e-12 * m.norm() {
                return Err(Error::NotPositiveDefinite { name });
            }
        }
        let inv_sqrt_r = sqrt_r.clone().try_inverse().ok_or(Error::NotPositiveDefinite { name: "R" })?;
        Ok(Self { plant, sqrt_q, sqrt_r, inv_sqrt_r: numeric::symmetric_part(&inv_sqrt_r) })
    }

    pub fn plant(&self) -> &PlantModel {
        &self.plant
    }
    pub fn sqrt_q(&self) -> &DMatrix<f64> {
        &self.sqrt_q
    }
    pub fn sqrt_r(&self) -> &DMatrix<f64> {
        &self.sqrt_r
    }
    pub fn inv_sqrt_r(&self) -> &DMatrix<f64> {
        &self.inv_sqrt_r
    }
}

/// `F` (weighted input to weighted state) and `G` (disturbance to weighted state).
#[derive(Debug, Clone)]
pub struct PlantResponses {
    pub f: GridSamples,
    pub g: GridSamples,
}

/// Samples `F(z) = Q^{1/2} (zI - A)^{-1} B_u R^{-1/2}` and
/// `G(z) = Q^{1/2} (zI - A)^{-1} B_w` at `z = e^{jw}`; both strictly causal.
pub fn eval_plant_responses(wp: &WeightedPlant, grid: &FrequencyGrid) -> Result<PlantResponses> {
    let plant = wp.plant();
    let (n, d, p) = (plant.n(), plant.d(), plant.p());
    let a = numeric::to_complex(plant.a());
    let mut rhs = DMatrix::<Complex64>::zeros(n, d + p);
    rhs.view_mut((0, 0), (n, d)).copy_from(&numeric::to_complex(plant.b_u()));
    rhs.view_mut((0, d), (n, p)).copy_from(&numeric::to_complex(plant.b_w()));
    let sqrt_q = numeric::to_complex(wp.sqrt_q());
    let inv_sqrt_r = numeric::to_complex(wp.inv_sqrt_r());

    let both = (0..grid.len())
        .into_par_iter()
        .map(|i| {
            let z = grid.point(i);
            let m = DMatrix::<Complex64>::identity(n, n) * z - &a;
            let x = numeric::solve_complex(m, &rhs).ok_or(Error::SingularResolvent { omega: grid.omega(i) })?;
            let xu = x.columns(0, d).into_owned();
            let xw = x.columns(d, p).into_owned();
            Ok((&sqrt_q * xu * &inv_sqrt_r, &sqrt_q * xw))
        })
        .collect::<Result<Vec<_>>>()?;
    let (fv, gv): (Vec<_>, Vec<_>) = both.into_iter().unzip();
    Ok(PlantResponses { f: GridSamples::new(*grid, n, d, fv)?, g: GridSamples::new(*grid, n, p, gv)? })
}
