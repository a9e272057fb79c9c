use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: cannot read `{value}` as a number")]
    Parse { row: usize, column: String, value: String },

    #[error("feature `{0}` has zero variance on the fit rows")]
    DegenerateFeature(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("training diverged at epoch {epoch}: {message}")]
    Training { epoch: usize, message: String },

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("Hessian is ill-conditioned even after stabilization (smallest eigenvalue ~ {min_eigenvalue:e})")]
    IllConditioned { min_eigenvalue: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no robust candidate found (best robust logit {max_robust_logit})")]
    NoRobustCandidate { max_robust_logit: f64 },

    #[error("optimization produced a non-finite loss at step {step}")]
    Optimization { step: usize },

    #[error("ensemble is empty: {0}")]
    EmptyEnsemble(String),

    #[error("dropout tuning failed: no variance admits at least 5% of samples (grid: {grid:?})")]
    TuningFailure { grid: Vec<(f64, f64)> },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(expected: usize, got: usize) -> Self {
        Error::DimensionMismatch { expected, got }
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::dim(expected, got))
    }
}
