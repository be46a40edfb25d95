//! Crate-wide error type and its mapping to process exit codes.

use thiserror::Error;

/// Errors produced by any metasat operation.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not conform.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// An API contract was violated by the caller.
    #[error("usage error: {0}")]
    Usage(String),

    /// Input data is malformed or out of range.
    #[error("data error: {0}")]
    Data(String),

    /// A configured resource limit was exceeded.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// Invalid configuration value or missing config key.
    #[error("config error: {0}")]
    Config(String),

    /// Episode sampling could not satisfy its frame requirements.
    #[error("sampling error: {0}")]
    Sampling(String),

    /// Underlying file I/O failure.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A persisted artifact could not be decoded.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },
}

impl Error {
    /// Short machine-parseable kind tag used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Dimension(_) => "dimension",
            Error::Usage(_) => "usage",
            Error::Data(_) => "data",
            Error::Capacity(_) => "capacity",
            Error::Config(_) => "config",
            Error::Sampling(_) => "sampling",
            Error::Io { .. } => "io",
            Error::Format { .. } => "format",
        }
    }

    /// Process exit code: 2 usage, 3 data, 4 capacity.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::Usage(_) | Error::Config(_) | Error::Dimension(_) => 2,
            Error::Data(_) | Error::Sampling(_) | Error::Io { .. } | Error::Format { .. } => 3,
            Error::Capacity(_) => 4,
        }
    }

    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
