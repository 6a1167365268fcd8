use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FidError {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("matrix is singular")]
    Singular,

    #[error("observation set is empty")]
    EmptyObservations,

    #[error("coordinate {0} has zero sample variance")]
    ZeroVariance(usize),

    #[error("invalid sparsity pattern: {0}")]
    InvalidPattern(String),

    #[error("invalid clique model: {0}")]
    InvalidModel(String),

    #[error("argument out of range: {0}")]
    OutOfRange(String),

    #[error("not enough samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("invalid configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, FidError>;
