use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller violated an operation precondition.
    #[error("usage error: {0}")]
    Usage(String),

    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },

    #[error("data error: {0}")]
    Data(String),

    #[error("manifest error: {0}")]
    Manifest(String),

    #[error("degenerate sensor range [{lo}, {hi}]")]
    DegenerateRange { lo: f64, hi: f64 },

    #[error("invalid simulation spec: {0}")]
    Spec(String),

    #[error("provider error: {0}")]
    Provider(#[from] crate::provider::ProviderError),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }

    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
