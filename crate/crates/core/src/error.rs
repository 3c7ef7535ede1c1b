use std::path::PathBuf;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("target exceeds cloud size ({target} > {size})")]
    TargetExceedsCloud { target: usize, size: usize },
    #[error("requested {k} neighbors from a cloud of {size} points")]
    TooFewPoints { k: usize, size: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("feature/cloud size mismatch: {features} feature rows for {points} points")]
    SizeMismatch { features: usize, points: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("no patch matches")]
    NoPatchMatches,
    #[error("no positive patches")]
    NoPositivePatches,
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
    #[error("registration failed: {0}")]
    RegistrationFailed(String),
    #[error("degenerate labels")]
    DegenerateLabels,
    #[error("bad magic in {0}")]
    BadMagic(&'static str),
    #[error("unexpected end of data")]
    UnexpectedEof,
    #[error("parse error at {path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io { context: context.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
