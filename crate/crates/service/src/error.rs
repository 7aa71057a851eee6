use thiserror::Error;

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("not found: {0}")]
    NotFound(String),

    /// A log line failed its checksum or did not parse, away from the tail.
    #[error("{path}: corrupt record at line {line}")]
    Corrupt { path: String, line: usize },

    #[error("pipeline is not running")]
    Stopped,

    #[error(transparent)]
    Core(#[from] phasorwatch::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
