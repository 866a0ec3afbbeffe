use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("channel {channel}: timestamps not strictly increasing at index {index}")]
    UnsortedTimestamps { channel: usize, index: usize },
    #[error("channel {channel}: non-finite value at index {index}")]
    NonFiniteValue { channel: usize, index: usize },
    #[error("channel {channel}: negative timestamp at index {index}")]
    NegativeTimestamp { channel: usize, index: usize },
    #[error("series has no observations")]
    EmptySeries,
    #[error("series has no channels")]
    NoChannels,

    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("split produced an empty {0} partition")]
    EmptyPartition(&'static str),

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("loss node is not scalar (length {0})")]
    NonScalarLoss(usize),
    #[error("non-finite gradient in parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("episode has no policy actions")]
    NoActions,

    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input too short: {0}")]
    TooShort(String),
    #[error("dataset contains a single class")]
    SingleClass,

    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
