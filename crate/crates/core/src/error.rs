use thiserror::Error;

/// Errors produced across the engine, simulator and data pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or layer shapes do not conform.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// An argument is outside its valid range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// A binary file is malformed. `offset` is the byte position where
    /// decoding failed.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Checkpoint spec hash does not match the requested model spec.
    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    /// Lap log was recorded against a different track.
    #[error("incompatible track: {0}")]
    IncompatibleTrack(String),

    /// Dataset is missing or insufficient for the requested operation.
    #[error("data error: {0}")]
    Data(String),

    /// Track geometry cannot be constructed from the given config.
    #[error("track construction error: {0}")]
    Construction(String),

    /// Operation invoked on an object in the wrong state.
    #[error("state error: {0}")]
    State(String),

    /// Demonstration recording failed (the oracle struck a cone).
    #[error("recording error: {0}")]
    Recording(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn parameter(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: msg.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }
}
