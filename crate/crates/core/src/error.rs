use std::path::PathBuf;

/// Errors raised anywhere in the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Shapes of the operands are incompatible.
    #[error("dimension error: {0}")]
    Dimension(String),
    /// A precondition of an operation was violated.
    #[error("contract error: {0}")]
    Contract(String),
    #[error("decode error in {}: {msg}", path.display())]
    Decode { path: PathBuf, msg: String },
    #[error("format error: {0}")]
    Format(String),
    #[error("config error at line {line}: {msg}")]
    Config { line: usize, msg: String },
    #[error("usage error: {0}")]
    Usage(String),
    /// Non-finite values appeared during training.
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}

pub(crate) fn contract_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Contract(msg.into()))
}
