use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("scaled support leaves the nonnegative lag axis (lag {lag} maps to {image})")]
    SupportViolation { lag: f64, image: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("no characteristic root on the imaginary axis in (0, {omega_max}]")]
    NotFound { omega_max: f64 },

    #[error("more than one imaginary pair found: omega = {0:?}")]
    MultiplePairs(Vec<f64>),

    #[error("argument-principle winding did not settle along the contour")]
    ContourFailure,

    #[error("center eigenspace is not simple (second smallest singular value {0:e})")]
    DegenerateEigenspace(f64),

    #[error("adjoint pairing is defective (|u^T D'(i) v| = {0:e})")]
    NormalizationFailure(f64),

    #[error("Hopf frequency must be 1 after normalization, found {0}")]
    NotNormalized(f64),

    #[error("feedback is not factored as C h(theta)")]
    NotFactored,

    #[error("distribution is not symmetric about its mean")]
    NotSymmetric,

    #[error("trajectory too short for classification: {0}")]
    TooShort(String),

    #[error("spectrum not certified: {root_count} roots with Re >= {re_lo} (expected exactly the Hopf pair)")]
    SpectrumNotCertified { root_count: i64, re_lo: f64 },

    #[error("problem file: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),
}
