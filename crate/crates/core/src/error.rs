use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("invalid shape {shape:?}: {reason}")]
    InvalidShape { shape: Vec<usize>, reason: String },
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("node {0} does not belong to this graph")]
    UnknownNode(usize),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("optimization diverged at iteration {iteration}, class {class}")]
    Diverged { iteration: usize, class: usize },
    #[error("class {0} has no samples")]
    EmptyClass(usize),
    #[error("label mismatch: {0}")]
    LabelMismatch(String),
    #[error("unknown ablation variant `{0}`")]
    UnknownVariant(String),
    #[error("unknown report format `{0}` (expected csv or json)")]
    UnknownFormat(String),
    #[error("{path}: bad magic")]
    BadMagic { path: PathBuf },
    #[error("{path}: truncated payload (expected {expected} bytes, found {found})")]
    TruncatedPayload { path: PathBuf, expected: u64, found: u64 },
    #[error("{path}: dimension overflow in extents {extents:?}")]
    DimensionOverflow { path: PathBuf, extents: Vec<u32> },
    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },
    #[error("io error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json encoding")]
    Json(#[from] serde_json::Error),
    #[error("csv encoding")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
