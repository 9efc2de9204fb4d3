use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("segment {0} covers no analysis frame")]
    EmptySegment(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid segmentation: {0}")]
    InvalidSegmentation(String),

    #[error("phone {symbol:?} at {mid_s:.3}s lies in no word")]
    OrphanPhone { symbol: String, mid_s: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },

    #[error("invalid training set for {emotion}: {reason}")]
    InvalidTrainingSet { emotion: String, reason: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("unknown speaker {0}")]
    UnknownSpeaker(usize),

    #[error("index {index} out of range for {level} level of size {len}")]
    Index {
        level: &'static str,
        index: usize,
        len: usize,
    },

    #[error("value {0} outside [0, 1]")]
    Range(f64),

    #[error("policy error: {0}")]
    Policy(String),

    #[error("replay failed at entry {entry}: {reason}")]
    Replay { entry: usize, reason: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(msg: impl std::fmt::Display) -> Self {
        Error::Format(msg.to_string())
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dim { expected, got })
    }
}
