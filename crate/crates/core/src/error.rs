use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// The CSV header does not match the expected column layout.
    #[error("format error: {0}")]
    Format(String),

    /// Timestamps must be strictly increasing; `row` is 1-based, header excluded.
    #[error("row {row}: timestamp {timestamp} does not follow the previous row")]
    Ordering { row: usize, timestamp: String },

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("need at least {needed} samples, got {got}")]
    Length { needed: usize, got: usize },

    #[error("wrong number of inputs: expected {expected}, got {got}")]
    Arity { expected: usize, got: usize },

    /// A channel has zero variance after de-trending.
    #[error("channel `{channel}` is degenerate (zero variance after de-trending)")]
    DegenerateChannel { channel: String },

    #[error("design matrix is rank deficient")]
    RankDeficient,

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("detector state error: {0}")]
    State(String),

    /// A score window with no point above the threshold is not an event.
    #[error("no score exceeds the threshold {threshold}")]
    NotAnEvent { threshold: f64 },

    #[error("not found: {0}")]
    NotFound(String),
}
