use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: {msg}")]
    InvalidShape { op: &'static str, msg: String },

    #[error("{op}: reduction over an empty axis")]
    EmptyAxis { op: &'static str },

    #[error("non-finite value produced by `{op}` (scope `{scope}`)")]
    NonFinite { op: &'static str, scope: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NotScalar(Vec<usize>),

    #[error("backward already ran on this graph; call reset_grads() first")]
    BackwardTwice,

    #[error("function is not deterministic: two evaluations gave {first} and {second}")]
    NonDeterministic { first: f64, second: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("index {index} out of range for {what} (len {len})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint {path}: corrupt file ({reason})")]
    CorruptCheckpoint { path: PathBuf, reason: String },

    #[error("checkpoint {path}: unsupported format version {found} (expected {expected})")]
    CheckpointVersion {
        path: PathBuf,
        found: u32,
        expected: u32,
    },

    #[error("checkpoint tensor `{name}` has shape {found:?} but the model expects {expected:?}")]
    CheckpointShape {
        name: String,
        found: Vec<usize>,
        expected: Vec<usize>,
    },

    #[error("checkpoint tensor `{name}`: {reason}")]
    CheckpointMismatch { name: String, reason: String },

    #[error("missing file {0}")]
    MissingFile(PathBuf),

    #[error("dataset: {path} has {bytes} bytes, which is not a whole number of {record}-byte records")]
    RecordCount {
        path: PathBuf,
        bytes: usize,
        record: usize,
    },

    #[error("dataset: {path} record {record} has label {label}, expected < {num_classes}")]
    BadLabel {
        path: PathBuf,
        record: usize,
        label: u8,
        num_classes: usize,
    },

    #[error("target class {target} out of range for {classes} classes")]
    BadTarget { target: usize, classes: usize },

    #[error("training diverged at epoch {epoch}, step {step} (lr {lr:.3e}): loss {loss}; first non-finite value in {location}")]
    Diverged {
        epoch: usize,
        step: usize,
        lr: f64,
        loss: f64,
        location: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
