use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("({pair}) is not stabilizable (uncontrollable mode at {eigenvalue})")]
    NotStabilizable { pair: &'static str, eigenvalue: String },

    #[error("disturbance channel must be scalar, got p = {p}")]
    DisturbanceNotScalar { p: usize },

    #[error("matrix {name} is not symmetric positive definite")]
    NotPositiveDefinite { name: &'static str },

    #[error("resolvent is numerically singular at omega = {omega}")]
    SingularResolvent { omega: f64 },

    #[error("no stabilizing DARE solution: {0}")]
    NoStabilizingSolution(String),

    #[error("factorization identity {identity} violated: residual {residual:e} > {tolerance:e}")]
    FactorizationIdentityViolated { identity: &'static str, residual: f64, tolerance: f64 },

    #[error("spectrum is not positive at sample {index} (value {value:e})")]
    NonPositiveSpectrum { index: usize, value: f64 },

    #[error("spectrum dynamic range {ratio:e} is below the conditioning guard")]
    IllConditionedSpectrum { ratio: f64 },

    #[error("spectrum is not even-symmetric (error {error:e})")]
    AsymmetricSpectrum { error: f64 },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("integrated parameter has imaginary part {leak:e}")]
    ImaginaryLeak { leak: f64 },

    #[error("fixed point not reached after {iters} iterations (last step {last_step:e})")]
    MaxItersExceeded { iters: usize, last_step: f64, history: Vec<f64> },

    #[error("gamma = {gamma:e} is infeasible: {reason}")]
    GammaInfeasible { gamma: f64, reason: String },

    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),

    #[error("gamma = {gamma:e} does not exceed the spectrum supremum {sup:e}")]
    GammaBelowSpectrum { gamma: f64, sup: f64 },

    #[error("bracket failure: {0}")]
    BracketFailure(String),

    #[error("causal leak {leak:e} exceeds tolerance {tolerance:e}")]
    CausalLeakExceeded { leak: f64, tolerance: f64 },

    #[error("non-finite sample encountered in {0}")]
    NonFiniteSample(&'static str),

    #[error("negative regret {value:e} beyond roundoff")]
    NegativeRegret { value: f64 },

    #[error("plant hash mismatch: cache built for {cached}, current plant is {current}")]
    PlantHashMismatch { cached: String, current: String },

    #[error("open-loop plant must be stable for time-domain simulation (spectral radius {radius})")]
    UnstableOpenLoop { radius: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse failure class, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Numerical,
    Infeasible,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parse(_)
            | Error::DimensionMismatch(_)
            | Error::NotStabilizable { .. }
            | Error::DisturbanceNotScalar { .. }
            | Error::NotPositiveDefinite { .. }
            | Error::GridMismatch(_)
            | Error::PlantHashMismatch { .. }
            | Error::InvalidConfig(_)
            | Error::Io(_) => ErrorClass::Config,
            Error::GammaInfeasible { .. } | Error::GammaBelowSpectrum { .. } | Error::BracketFailure(_) => {
                ErrorClass::Infeasible
            }
            _ => ErrorClass::Numerical,
        }
    }

    /// Short stable identifier for machine-readable error records.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Parse(_) => "ParseError",
            Error::DimensionMismatch(_) => "DimensionMismatch",
            Error::NotStabilizable { .. } => "NotStabilizable",
            Error::DisturbanceNotScalar { .. } => "DisturbanceNotScalar",
            Error::NotPositiveDefinite { .. } => "NotPositiveDefinite",
            Error::SingularResolvent { .. } => "SingularResolvent",
            Error::NoStabilizingSolution(_) => "NoStabilizingSolution",
            Error::FactorizationIdentityViolated { .. } => "FactorizationIdentityViolated",
            Error::NonPositiveSpectrum { .. } => "NonPositiveSpectrum",
            Error::IllConditionedSpectrum { .. } => "IllConditionedSpectrum",
            Error::AsymmetricSpectrum { .. } => "AsymmetricSpectrum",
            Error::GridMismatch(_) => "GridMismatch",
            Error::ImaginaryLeak { .. } => "ImaginaryLeak",
            Error::MaxItersExceeded { .. } => "MaxItersExceeded",
            Error::GammaInfeasible { .. } => "GammaInfeasible",
            Error::NumericalBreakdown(_) => "NumericalBreakdown",
            Error::GammaBelowSpectrum { .. } => "GammaBelowSpectrum",
            Error::BracketFailure(_) => "BracketFailure",
            Error::CausalLeakExceeded { .. } => "CausalLeakExceeded",
            Error::NonFiniteSample(_) => "NonFiniteSample",
            Error::NegativeRegret { .. } => "NegativeRegret",
            Error::PlantHashMismatch { .. } => "PlantHashMismatch",
            Error::UnstableOpenLoop { .. } => "UnstableOpenLoop",
            Error::InvalidConfig(_) => "InvalidConfig",
            Error::Io(_) => "IoError",
        }
    }
}
