use thiserror::Error;

/// Errors raised by the model, sampler and post-processing routines.
#[derive(Debug, Error)]
pub enum MpsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("numerical degeneracy: {0}")]
    Degenerate(String),

    #[error("unsupported dimension: {0}")]
    UnsupportedDimension(String),

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("parse error at row {row}, column {col}: {msg}")]
    Parse { row: usize, col: usize, msg: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("iteration {iter}: {source}")]
    AtIteration {
        iter: usize,
        #[source]
        source: Box<MpsError>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, MpsError>;

pub(crate) fn invalid(msg: impl Into<String>) -> MpsError {
    MpsError::InvalidArgument(msg.into())
}
