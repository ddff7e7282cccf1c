use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("token index {index} out of range for a table of {entries} entries")]
    InvalidToken { index: u64, entries: u64 },
    #[error("table size {0} is not a power of two")]
    NotPowerOfTwo(u64),
    #[error("protocol violation: {0}")]
    ProtocolViolation(&'static str),
    #[error("payload of {0} bytes exceeds the maximum")]
    PayloadTooLarge(usize),
    #[error("frame size {0} outside 64..=1518")]
    InvalidFrameSize(usize),
    #[error("dscp value {0} does not fit in 6 bits")]
    InvalidDscp(u8),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("histogram is empty")]
    EmptyHistogram,
    #[error("percentile {0} outside (0, 100)")]
    InvalidPercentile(f64),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("degenerate fit: {0}")]
    DegenerateFit(&'static str),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
