use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A manifest or event file line failed to parse. `record` is the
    /// 1-based line number within the file.
    #[error("parse error at record {record}: {message}")]
    Parse { record: usize, message: String },

    /// A record parsed but violated a dataset invariant.
    #[error("invalid record {record} (clip {clip_id}): {message}")]
    Validation {
        record: usize,
        clip_id: String,
        message: String,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("audio error: {0}")]
    Audio(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("completion client error: {0}")]
    Client(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub fn audio(msg: impl Into<String>) -> Self {
        Error::Audio(msg.into())
    }
}
