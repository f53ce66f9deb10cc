use thiserror::Error;

/// Crate-wide error type.
///
/// Variants are grouped by failure class so callers (notably the CLI) can map
/// them onto stable exit codes without string matching.
#[derive(Debug, Error)]
pub enum Error {
    /// Malformed file container (bad magic, unsupported version, bad field).
    #[error("format error: {0}")]
    Format(String),

    /// Payload shorter or longer than the header promises.
    #[error("length error: {0}")]
    Length(String),

    /// Values violate a data invariant (NaN, negative rate, bad timestamps).
    #[error("data error: {0}")]
    Data(String),

    /// Tensor/array shape mismatch; the message names the offending axis.
    #[error("dimension error: {0}")]
    Dim(String),

    /// Invalid configuration (hyperparameters, ranges, fan computation).
    #[error("config error: {0}")]
    Config(String),

    /// Numeric failure (singular system, non-finite loss or gradient).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A runtime contract was violated (e.g. a model emitted the wrong shape).
    #[error("contract error: {0}")]
    Contract(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
