use thiserror::Error;

/// Errors raised by the readout library.
#[derive(Debug, Error)]
pub enum ReadoutError {
    /// A numeric argument lies outside the domain of the function.
    #[error("domain error: {0}")]
    Domain(String),
    /// Inputs are well-typed but unusable (empty grids, missing records, ...).
    #[error("usage error: {0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl ReadoutError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Self::Domain(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Self::Usage(msg.into())
    }

    /// True for errors caused by invalid inputs rather than the environment.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Self::Domain(_) | Self::Usage(_) | Self::Csv(_) | Self::Json(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, ReadoutError>;
