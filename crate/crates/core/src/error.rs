use thiserror::Error;

/// Errors raised by the factorization, solver and model layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("ill-conditioned system: {0}")]
    Conditioning(String),

    #[error("too few points: need at least {needed}, got {got}")]
    Size { needed: usize, got: usize },

    #[error("problem too large: limit {limit}, got {got}")]
    TooLarge { limit: usize, got: usize },

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("missing state: {0}")]
    State(String),

    #[error("estimator failure: {0}")]
    Estimator(String),

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
