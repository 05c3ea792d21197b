use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("rotation angle {angle} too close to pi for a unique logarithm")]
    LogDomain { angle: f64 },

    #[error("timestamps must be strictly increasing (got {prev} then {next})")]
    NonMonotonicTime { prev: f64, next: f64 },

    #[error("time {t} outside the covered interval [{start}, {end}]")]
    Extrapolation { t: f64, start: f64, end: f64 },

    #[error("degenerate geometry: {0}")]
    Degenerate(&'static str),

    #[error("pose graph has no fixed node; gauge is undetermined")]
    Gauge,

    #[error("unknown node id {0}")]
    UnknownNode(usize),

    #[error("matrix block is singular after regularization")]
    Singular,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("{0}")]
    Pipeline(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }
}
