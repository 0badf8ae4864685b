//! Error type shared by every module in the crate.

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument is out of range or otherwise unusable.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Tensor or matrix shapes do not line up.
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    /// A configuration value failed validation; the message names the field.
    #[error("configuration error: {0}")]
    Config(String),

    /// A file did not match its expected on-disk format.
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    /// A dataset, manifest, or checkpoint is missing or inconsistent.
    #[error("data error: {0}")]
    Data(String),

    /// A metric is undefined for the given inputs (e.g. single-class AUROC).
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    /// A numeric operation left its mathematical domain.
    #[error("numeric domain error: {0}")]
    NumericDomain(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::ShapeMismatch(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}
