use thiserror::Error;

/// Errors raised by the clustering pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vector has zero norm (client {client:?})")]
    DegenerateVector { client: Option<usize> },

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid shape: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("cache is stale: produced at model version {cache}, model is at {model}")]
    StaleCache { cache: u64, model: u64 },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },

    #[error("scenario constraints unsatisfiable after {draws} draws")]
    Unsatisfiable { draws: usize },

    #[error("clip too short: {frames} frames, need at least {needed}")]
    TooShort { frames: usize, needed: usize },

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
