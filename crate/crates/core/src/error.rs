use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("functional returned non-finite value {value} at sample index {index}")]
    NonFinite { index: usize, value: f64 },

    #[error("empty ball: no sample point within radius {radius} of the query point")]
    EmptyBall { radius: f64 },

    #[error("degenerate functional `{0}`: conditional variance is zero")]
    DegenerateFunctional(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invalid experiment spec: {0}")]
    InvalidSpec(String),

    #[error("result verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        Error::InvalidSpec(msg.into())
    }

    /// True for failures that stem from arithmetic on the data rather than
    /// from malformed input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::EmptyBall { .. }
                | Error::DegenerateFunctional(_)
                | Error::Verification(_)
        )
    }
}
