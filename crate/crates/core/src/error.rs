use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is below the degenerate threshold")]
    ZeroVector { norm: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid beta shape ({alpha}, {beta}): both parameters must be positive")]
    InvalidShape { alpha: f64, beta: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("activation cache does not match the parameters or upstream gradient: {0}")]
    StaleCache(String),

    #[error("momentum coefficient {0} is outside [0, 1]")]
    InvalidMomentum(f64),

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("batch of {batch} keys does not fit in a queue of capacity {capacity}")]
    BatchTooLarge { batch: usize, capacity: usize },

    #[error("key {index} has norm {norm}, expected a unit vector")]
    NotNormalized { index: usize, norm: f64 },

    #[error("lambda {lambda} outside the allowed range [{lo}, {hi}]")]
    LambdaOutOfRange { lambda: f64, lo: f64, hi: f64 },

    #[error("index sequence is not a permutation of 0..{0}")]
    InvalidPermutation(usize),

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("series `{0}` has no points")]
    EmptySeries(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A dataset file could not be read.
    #[error("cannot read dataset {path}: {source}")]
    DataUnreadable {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: bad IDX magic {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("image file holds {images} items but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("{path}: truncated, needed {needed} bytes but found {found}")]
    Truncated {
        path: PathBuf,
        needed: usize,
        found: usize,
    },

    #[error("row {row} has {got} fields, expected {expected}")]
    RaggedRows {
        row: usize,
        expected: usize,
        got: usize,
    },

    #[error("row {row}, column {column}: `{value}` is not a finite number")]
    NonNumeric {
        row: usize,
        column: usize,
        value: String,
    },

    #[error("bad shape: {0}")]
    BadShape(String),

    #[error("{key}: labels are degenerate ({reason})")]
    DegenerateLabels { key: String, reason: String },

    #[error("config {key}: {message}")]
    Config { key: String, message: String },

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersionMismatch { found: u32, expected: u32 },

    #[error("malformed checkpoint: {0}")]
    BadCheckpoint(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("non-finite loss at epoch {epoch}, step {step}")]
    NumericFailure { epoch: usize, step: usize },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line front end.
    ///
    /// `2` config, `3` data, `4` numeric failure, `1` anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidTemperature(_) | Error::InvalidMomentum(_) => 2,
            Error::DataUnreadable { .. }
            | Error::BadMagic { .. }
            | Error::CountMismatch { .. }
            | Error::Truncated { .. }
            | Error::RaggedRows { .. }
            | Error::NonNumeric { .. }
            | Error::BadShape(_)
            | Error::DegenerateLabels { .. }
            | Error::CheckpointVersionMismatch { .. }
            | Error::BadCheckpoint(_)
            | Error::Parse(_)
            | Error::EmptyInput(_) => 3,
            Error::NumericFailure { .. } | Error::ZeroVector { .. } => 4,
            _ => 1,
        }
    }
}
