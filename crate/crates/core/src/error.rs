use thiserror::Error;

/// Errors shared by every module.
///
/// The split mirrors the CLI exit codes: a `Usage` error means the caller
/// asked for something malformed (bad arguments, inconsistent shapes), a
/// `Data` error means the input itself is broken (non-finite values,
/// timestamps out of order, a short CSV row).
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("data error: {0}")]
    Data(String),
}

impl Error {
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub fn is_usage(&self) -> bool {
        matches!(self, Error::Usage(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
