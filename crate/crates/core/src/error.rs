use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("unmappable actor code {0:?}")]
    UnmappableActor(String),

    #[error("unknown CAMEO action code {0}")]
    UnknownAction(i64),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value at position {0}")]
    NonFinite(usize),

    #[error("values are not strictly ordered at position {0}")]
    NotOrdered(usize),

    #[error("invalid event tuple at index {index}: {reason}")]
    InvalidTuple { index: usize, reason: String },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_finite(values: &[f64]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(i)),
        None => Ok(()),
    }
}
