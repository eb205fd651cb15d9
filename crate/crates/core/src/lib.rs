//! Frequency-domain synthesis and evaluation of distributionally robust
//! regret-optimal (DR-RO) controllers for discrete-time LTI plants driven by a
//! scalar disturbance.
//!
//! Typical flow:
//!
//! 1. load a [`PlantModel`] and build a [`PlantContext`] on a [`FrequencyGrid`]
//!    (Riccati solution, canonical factor, noncausal optimum);
//! 2. find the feasibility threshold with [`estimate_gamma_ro`] and the dual
//!    parameter for a radius with [`solve_gamma_star`];
//! 3. compare controllers with [`evaluate_controller`] and [`cross_evaluate`].
//!
//! Controllers are handled as frequency samples ([`ControllerSamples`]) in
//! weighted input coordinates `u' = R^{1/2} u`.

// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod cache;
pub mod context;
pub mod error;
pub mod gamma;
pub mod model;
pub mod numeric;
pub mod regret;
pub mod riccati;
pub mod specfact;
pub mod synthesis;

pub use baselines::{h2_controller, import_controller, ro_limit_controller, ImportedController};
pub use cache::{load_controller, read_controller, save_controller, write_controller, CachedController};
pub use context::PlantContext;
pub use error::{Error, ErrorClass, Result};
pub use gamma::{estimate_gamma_ro, solve_gamma_star, GammaSearchConfig, GammaSolution, RadiusSpec};
pub use model::{
    eval_plant_responses, load_plant, parse_plant, FrequencyGrid, GridSamples, PlantModel, PlantResponses,
    WeightedPlant,
};
pub use regret::{
    cross_evaluate, evaluate_controller, expected_regret_under, monte_carlo_expected_regret, operator_norm_profile,
    regret_spectrum, wasserstein_residual, worst_case_expected_regret, Evaluation, MonteCarloConfig, MonteCarloResult,
    RegretReport, RegretSpectrum, WorstCaseSpectrum,
};
pub use riccati::{adjoint_triple, canonical_factors, solve_dare, AdjointTriple, CanonicalFactors, RiccatiData};
pub use specfact::{factor_residuals, spectral_factor_dft, Factorizer, ScalarFactor, ScalarSpectrum};
pub use synthesis::{
    bbar_from_l, impulse_response, n_from_s, s_minus_from_bbar, synthesize, synthesize_from, ControllerSamples,
    FixedPointMethod, ImpulseResponse, Provenance, SynthesisConfig, SynthesisState,
};
