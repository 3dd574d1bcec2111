use thiserror::Error;

use crate::model::CenModel;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum CenError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch in {op}: expected {expected}, got {got}")]
    Shape {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged {
        epoch: usize,
        detail: String,
        /// Parameters from the last step whose loss was finite.
        last_finite: Box<CenModel>,
    },

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("singular normal equations in surrogate fit (ridge = 0)")]
    SingularFit,

    #[error("ingestion error at row {row}: {message}")]
    Ingestion { row: usize, message: String },

    #[error("not implemented: {0}")]
    Unimplemented(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = CenError> = std::result::Result<T, E>;

impl CenError {
    pub(crate) fn shape(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        CenError::Shape {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        CenError::InvalidInput(msg.into())
    }
}
