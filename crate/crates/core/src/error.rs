use std::path::PathBuf;

use thiserror::Error;

use crate::graph::NodeId;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value produced at node {node:?}")]
    NumericalFailure { node: NodeId },

    #[error("operation {op} has no rule for order-{order} tangents")]
    UnsupportedOp { op: &'static str, order: usize },

    #[error("backward pass already ran on this tape")]
    TapeConsumed,

    #[error("invalid dimension: {0}")]
    InvalidDim(String),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    ShapeMismatch { expected: String, actual: String },

    #[error("correlation head produced non-positive diagonal term d[{index}] = {value}")]
    NonPositiveD { index: usize, value: f64 },

    #[error("correlation matrix is singular even after jitter")]
    SingularCorrelation,

    #[error("column {column} has zero variance")]
    DegenerateColumn { column: usize },

    #[error("full likelihood requested for K = {k}; at most 4 response dimensions are supported")]
    DimTooLarge { k: usize },

    #[error("marginal subset must be non-empty")]
    EmptySubset,

    #[error("non-finite gradient")]
    NonFiniteGradient,

    #[error("training diverged: batch size reached its cap of {cap} and the loss stayed non-finite")]
    TrainingDiverged { cap: usize },

    #[error("non-positive price {value} at row {row}, column {column}")]
    NonPositivePrice { row: usize, column: usize, value: f64 },

    #[error("empty input")]
    EmptyInput,

    #[error("cannot parse {cell:?} at row {row}, col {col}")]
    Parse { row: usize, col: usize, cell: String },

    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRow { row: usize, expected: usize, found: usize },

    #[error("column index {index} out of range for {columns} columns")]
    ColumnOutOfRange { index: usize, columns: usize },

    #[error("both classes must be present")]
    OneClassOnly,

    #[error("no positive labels")]
    NoPositives,

    #[error("could not bracket p = {p}: bracket grew to ±{limit}")]
    BracketFailure { p: f64, limit: f64 },

    #[error("bivariate density integrates to {mass}, outside [0.9, 1.05]")]
    NegativeMass { mass: f64 },

    #[error("model file format version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("model file failed checksum verification")]
    ChecksumFailure,

    #[error("model family mismatch: expected {expected}, file holds {found}")]
    FamilyMismatch { expected: String, found: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("I/O error on {path:?}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn shape(expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
