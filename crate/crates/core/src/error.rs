use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid series: {0}")]
    InvalidSeries(String),

    #[error("series is constant; min-max scaling is undefined")]
    ConstantSeries,

    #[error("series of length {len} is too short (need at least {needed})")]
    SeriesTooShort { len: usize, needed: usize },

    #[error("split leaves an empty side")]
    EmptySplit,

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("empty input")]
    Empty,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("training failed: {0}")]
    TrainingFailed(String),

    #[error("degenerate HMM fit: {0}")]
    DegenerateFit(String),

    #[error("no delay found by mutual information or autocorrelation")]
    NoDelayFound,

    #[error("mean displacement vanished for every candidate anchor")]
    ZeroMeanDisplacement,

    #[error("phi ratio {0} not found in curve")]
    RatioNotFound(f64),

    #[error("record at phi ratio {0} has no label")]
    LabelMissing(f64),

    #[error("invalid protocol: {0}")]
    InvalidProtocol(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Parse {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
