use thiserror::Error;

/// Errors produced by tensor ops, model construction, training, and file I/O.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("autodiff error: {0}")]
    Autodiff(String),

    #[error("model format error: {0}")]
    ModelFormat(String),

    #[error("corpus format error: {0}")]
    CorpusFormat(String),

    #[error("vocabulary mismatch: {0}")]
    VocabMismatch(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;

impl CoreError {
    pub fn shape(msg: impl Into<String>) -> Self {
        CoreError::Shape(msg.into())
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        CoreError::InvalidArg(msg.into())
    }
}
