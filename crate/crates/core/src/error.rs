use thiserror::Error;

/// Errors raised by the GMRF primitives, the imputation builders and the engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum GmrfError {
    #[error("matrix is not positive definite (pivot {pivot:e} at column {column})")]
    NotPositiveDefinite { column: usize, pivot: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("index partition has no missing entries")]
    EmptyMissingSet,
    #[error("adjacency matrix has no nonzero entries")]
    ZeroMatrix,
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("newton iteration diverged: {0}")]
    NewtonDiverged(String),
    #[error("hyperparameter exploration failed: {0}")]
    ExplorationFailed(String),
    #[error("chain diverged at iteration {0}")]
    ChainDiverged(usize),
    #[error("proportion {0} outside (0, 1) or not strictly ascending")]
    ProportionOutOfRange(f64),
    #[error("model has no imputation effect named `{0}`")]
    MissingEffectReference(String),
    #[error("stratum `{0}` has no observed units")]
    DegenerateTable(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
}

pub type Result<T> = std::result::Result<T, GmrfError>;
