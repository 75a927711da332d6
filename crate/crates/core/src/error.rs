use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm {norm:e} is too small to normalize")]
    ZeroVector { norm: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),

    #[error("clamp must be positive, got {0}")]
    NonPositiveClamp(f64),

    #[error("probabilities sum to {sum}, not 1")]
    InvalidSimplex { sum: f64 },

    #[error("{function} is undefined at x = {x}")]
    DomainError { function: &'static str, x: f64 },

    #[error("total conflict while fusing opinion {index} (1 - K = {residual:e})")]
    TotalConflict { index: usize, residual: f64 },

    #[error("class count mismatch: {0} vs {1}")]
    ClassCountMismatch(usize, usize),

    #[error("at least two templates are required, got {0}")]
    TooFewTemplates(usize),

    #[error("no opinions to fuse")]
    NoOpinions,

    #[error("non-finite loss at epoch {epoch}, iteration {iteration}")]
    NonFiniteLoss { epoch: usize, iteration: usize },

    #[error("dataset has no training samples")]
    EmptyDataset,

    #[error("the {0} partition is empty")]
    EmptyPartition(&'static str),

    #[error("dimension {dim} too small for {required} orthonormal factor directions")]
    DimensionTooSmall { dim: usize, required: usize },

    #[error("line {line}: malformed header: {detail}")]
    MalformedHeader { line: usize, detail: String },

    #[error("line {line}: expected {expected} values, found {found}")]
    RowDimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("line {line}: unknown split tag {tag:?}")]
    UnknownSplitTag { line: usize, tag: String },

    #[error("line {line}: malformed row: {detail}")]
    MalformedRow { line: usize, detail: String },

    #[error("truncated file at byte offset {offset}")]
    TruncatedFile { offset: usize },

    #[error("unknown class {0}")]
    UnknownClass(usize),

    #[error("class {0} has no anchor embedding")]
    MissingAnchor(usize),

    #[error("checkpoint has bad magic bytes")]
    BadMagic,

    #[error("checkpoint shape mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

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
}
