use std::io;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor extents or counts that do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("invalid probability {0}: expected 0 <= p < 1")]
    InvalidProbability(f64),

    #[error("invalid label {0}: expected 0 or 1")]
    InvalidLabel(usize),

    /// A caller broke an API precondition (e.g. backward on a non-scalar).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("config error: {0}")]
    Config(String),

    /// Config file problems carry the offending key and line.
    #[error("config error at line {line} ({key}): {message}")]
    ConfigLine {
        line: usize,
        key: String,
        message: String,
    },

    #[error("range error: {0}")]
    Range(String),

    #[error("clip has no blocks")]
    EmptyClip,

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("non-finite loss at epoch {epoch}, batch {batch}: {loss}")]
    NonFiniteLoss { epoch: usize, batch: usize, loss: f64 },

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }
}
