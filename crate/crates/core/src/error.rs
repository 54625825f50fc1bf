use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A computation would exceed its configured memory or size budget.
    #[error("resource limit: {0}")]
    Resource(String),

    /// The assembled state has zero norm (nothing was accepted).
    #[error("degenerate state: {0}")]
    Degenerate(String),

    /// Inputs are individually valid but inconsistent with each other.
    #[error("usage error: {0}")]
    Usage(String),

    /// A reference computation refused to run because its truncation would leak.
    #[error("oracle refused: {0}")]
    Refused(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn domain<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Domain(msg.into()))
}
