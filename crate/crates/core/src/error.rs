use std::path::PathBuf;

/// Errors raised anywhere in the retrieval / tuning pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}: {msg}")]
    Parse { row: usize, msg: String },

    #[error("corrupt file at byte offset {offset}: {msg}")]
    Corrupt { offset: usize, msg: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("zero-norm descriptor for id {0:?}")]
    ZeroNorm(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("unknown id {0:?}")]
    UnknownId(String),

    #[error("query disconnected: no positive similarity among the {0} seed items")]
    QueryDisconnected(usize),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("singular system")]
    Singular,

    #[error("no ranking for query {0:?}")]
    MissingRanking(String),

    #[error("grid of {size} settings exceeds the hard cap of {cap}")]
    GridTooLarge { size: u128, cap: u128 },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
