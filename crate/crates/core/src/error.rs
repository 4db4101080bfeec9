use std::io;

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or batch shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A class index or label is out of range.
    #[error("index error: {0}")]
    Index(String),

    /// A caller violated a documented precondition.
    #[error("contract error: {0}")]
    Contract(String),

    /// NaN/inf surfaced during a numeric step.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Malformed binary or text input. `offset` is the byte position where
    /// parsing stopped.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("insufficient tail: {exceedances} exceedances above the tail onset, need at least {required}")]
    InsufficientTail { exceedances: usize, required: usize },

    /// The tail likelihood maximization did not settle. Carries the best
    /// iterate seen so callers can inspect it.
    #[error("GPD fit failed: {message} (best zeta={best_zeta}, mu={best_mu})")]
    Fit {
        message: String,
        best_zeta: f64,
        best_mu: f64,
    },

    #[error("threshold not fitted")]
    ThresholdMissing,

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
