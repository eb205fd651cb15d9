//! Per-plant, per-grid precomputation shared by synthesis, the gamma search
//! and the evaluators.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{eval_plant_responses, FrequencyGrid, PlantModel, PlantResponses, WeightedPlant};
use crate::numeric::{self, to_complex};
use crate::riccati::{
    adjoint_triple, canonical_factors_with, solve_dare, AdjointTriple, CanonicalFactors, RiccatiData,
};
use crate::specfact::Factorizer;

#[derive(Debug, Clone)]
pub struct PlantContext {
    wp: WeightedPlant,
    grid: FrequencyGrid,
    rd: RiccatiData,
    triple: AdjointTriple,
    factors: CanonicalFactors,
    responses: PlantResponses,
    factorizer: Factorizer,
    /// `Cbar (e^{-jw} I - Abar)^{-1}` per grid point, row-major `d x n`.
    s_bank: Vec<Complex64>,
    /// `(I - e^{jw} Abar)^{-1} Dbar` per grid point.
    b_bank: Vec<Complex64>,
    open_loop_radius: f64,
    plant_hash: String,
}

impl PlantContext {
    pub fn new(plant: PlantModel, grid: FrequencyGrid) -> Result<Self> {
        Self::from_weighted(WeightedPlant::new(plant)?, grid)
    }

    pub fn from_weighted(wp: WeightedPlant, grid: FrequencyGrid) -> Result<Self> {
        let rd = solve_dare(&wp)?;
        let triple = adjoint_triple(&rd, &wp);
        let factors = canonical_factors_with(&rd, &triple, &wp, &grid)?;
        let responses = eval_plant_responses(&wp, &grid)?;
        let (n, d) = (wp.plant().n(), wp.plant().d());

        let abar = to_complex(&triple.abar);
        let cbar = to_complex(&triple.cbar);
        let dbar = to_complex(&DMatrix::from_column_slice(n, 1, triple.dbar.as_slice()));
        let eye = DMatrix::<Complex64>::identity(n, n);
        let banks = (0..grid.len())
            .into_par_iter()
            .map(|i| {
                let zc = grid.point(i).conj();
                let res = numeric::solve_complex(&eye * zc - &abar, &eye)
                    .ok_or(Error::SingularResolvent { omega: grid.omega(i) })?;
                let s_rows = &cbar * &res;
                let b_col = (&res * &dbar) * zc;
                let mut s = Vec::with_capacity(d * n);
                for r in 0..d {
                    for c in 0..n {
                        s.push(s_rows[(r, c)]);
                    }
                }
                Ok((s, b_col.column(0).iter().cloned().collect::<Vec<_>>()))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut s_bank = Vec::with_capacity(grid.len() * d * n);
        let mut b_bank = Vec::with_capacity(grid.len() * n);
        for (s, b) in banks {
            s_bank.extend(s);
            b_bank.extend(b);
        }
        let open_loop_radius = numeric::spectral_radius(wp.plant().a());
        let plant_hash = wp.plant().content_hash();
        Ok(Self {
            factorizer: Factorizer::new(grid),
            wp,
            grid,
            rd,
            triple,
            factors,
            responses,
            s_bank,
            b_bank,
            open_loop_radius,
            plant_hash,
        })
    }

    pub fn weighted(&self) -> &WeightedPlant {
        &self.wp
    }
    pub fn plant(&self) -> &PlantModel {
        self.wp.plant()
    }
    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }
    pub fn riccati(&self) -> &RiccatiData {
        &self.rd
    }
    pub fn triple(&self) -> &AdjointTriple {
        &self.triple
    }
    pub fn factors(&self) -> &CanonicalFactors {
        &self.factors
    }
    pub fn responses(&self) -> &PlantResponses {
        &self.responses
    }
    pub fn factorizer(&self) -> &Factorizer {
        &self.factorizer
    }
    pub fn n(&self) -> usize {
        self.plant().n()
    }
    pub fn d(&self) -> usize {
        self.plant().d()
    }
    pub fn open_loop_radius(&self) -> f64 {
        self.open_loop_radius
    }
    /// Causality diagnostics of two-sided objects are only meaningful when
    /// the plant's resolvent expands causally on the unit circle.
    pub fn open_loop_stable(&self) -> bool {
        self.open_loop_radius < 1.0
    }
    pub fn plant_hash(&self) -> &str {
        &self.plant_hash
    }

    /// `|T(w)|^2` samples, where `T` is the strictly anticausal part of `Delta K_circ`.
    pub fn tpart_power(&self) -> Vec<f64> {
        self.factors.tpart.values().iter().map(|m| m.norm_squared()).collect()
    }

    /// `S(w) = Cbar (e^{-jw} I - Abar)^{-1} bbar`, flat `N x d`.
    pub(crate) fn s_from_bbar_fast(&self, bbar: &[f64]) -> Vec<Complex64> {
        let (n, d) = (self.n(), self.d());
        self.s_bank
            .par_chunks(d * n)
            .with_min_len(256)
            .flat_map_iter(|rows| {
                (0..d).map(move |r| {
                    let row = &rows[r * n..(r + 1) * n];
                    row.iter().zip(bbar).map(|(a, b)| a * b).sum::<Complex64>()
                })
            })
            .collect()
    }

    /// `mean_w (I - e^{jw} Abar)^{-1} Dbar L(w)`, complex.
    pub(crate) fn bbar_from_l_fast(&self, l: &[Complex64]) -> Vec<Complex64> {
        let n = self.n();
        let len = l.len();
        (0..n)
            .map(|c| {
                let terms: Vec<Complex64> = (0..len).map(|i| self.b_bank[i * n + c] * l[i]).collect();
                numeric::pairwise_sum_complex(&terms) / len as f64
            })
            .collect()
    }
}
