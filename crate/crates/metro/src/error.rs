use thiserror::Error;

/// Error type shared by all library operations.
///
/// The `category` method yields a short machine-parsable label used by the
/// CLI for its one-line error output.
#[derive(Debug, Error)]
pub enum MetroError {
    /// A mathematical precondition was violated (e.g. non-positive depth).
    #[error("domain error: {0}")]
    Domain(String),
    /// An API contract was violated (shape mismatch, empty mask, ...).
    #[error("contract error: {0}")]
    Contract(String),
    /// Input data is degenerate for the requested operation.
    #[error("degenerate configuration: {0}")]
    Degenerate(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

impl MetroError {
    pub fn domain(msg: impl Into<String>) -> Self {
        MetroError::Domain(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        MetroError::Contract(msg.into())
    }

    pub fn degenerate(msg: impl Into<String>) -> Self {
        MetroError::Degenerate(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        MetroError::Format(msg.into())
    }

    pub fn category(&self) -> &'static str {
        match self {
            MetroError::Domain(_) => "domain",
            MetroError::Contract(_) => "contract",
            MetroError::Degenerate(_) => "degenerate",
            MetroError::Io(_) => "io",
            MetroError::Format(_) => "format",
        }
    }
}

pub type Result<T> = std::result::Result<T, MetroError>;
