use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite value at sample {index}")]
    NonFinite { index: usize },

    #[error("filter output became non-finite at sample {index} (unstable filter)")]
    Instability { index: usize },

    #[error("filter is unstable: denominator has roots on or outside the unit circle")]
    UnstableFilter,

    #[error("transfer function has a pole on the unit circle at omega = {omega}")]
    PoleOnUnitCircle { omega: f64 },

    #[error("Q filter vanishes on the unit circle at omega = {omega}; 1/Q is undefined")]
    QZeroOnUnitCircle { omega: f64 },

    #[error("plant model cannot be inverted: {0}")]
    Inversion(String),

    #[error("simulation diverged at step {step}")]
    Diverged { step: usize },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("feature `{feature}` has zero variance; cannot normalize")]
    DegenerateFeature { feature: String },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("convergence pre-check failed: {0}")]
    ConvergencePrecheck(String),
}
