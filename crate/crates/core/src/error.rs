use adgraph::AdError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("integrity error: {0}")]
    Integrity(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<AdError> for Error {
    fn from(e: AdError) -> Self {
        match e {
            AdError::NonFinite { .. } => Error::Numeric(e.to_string()),
            AdError::Shape { .. } | AdError::NonScalarRoot(_) => Error::Contract(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
