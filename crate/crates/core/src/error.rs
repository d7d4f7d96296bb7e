use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TensorError {
    #[error("shape {shape:?} has a zero extent")]
    EmptyExtent { shape: Vec<usize> },
    #[error("shape {shape:?} needs {expected} values, got {actual}")]
    DataLength {
        shape: Vec<usize>,
        expected: usize,
        actual: usize,
    },
    #[error("cannot reshape {from:?} into {to:?}")]
    Reshape { from: Vec<usize>, to: Vec<usize> },
    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank {
        op: &'static str,
        expected: &'static str,
        shape: Vec<usize>,
    },
    #[error("matmul: inner dimensions disagree, lhs {lhs:?} vs rhs {rhs:?}")]
    MatMul { lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("{op}: cannot broadcast {lhs:?} with {rhs:?}")]
    Broadcast {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("invalid axes {axes:?} for shape {shape:?}")]
    InvalidAxes { shape: Vec<usize>, axes: Vec<usize> },
    #[error("{op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("expected a single value, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },
    #[error("{op} produced a non-finite value at node {node}")]
    NonFinite { op: &'static str, node: usize },
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid configuration: {0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Error)]
pub enum DataError {
    #[error("feature pack: {message} (byte offset {offset})")]
    Parse { offset: usize, message: String },
    #[error("feature pack length mismatch: expected {expected} bytes, found {actual}")]
    Length { expected: u64, actual: u64 },
    #[error("dataset has {available} classes but {requested} were requested")]
    InsufficientClasses { available: usize, requested: usize },
    #[error("class {class} has {available} videos but {requested} are needed per episode")]
    InsufficientVideos {
        class: u32,
        available: usize,
        requested: usize,
    },
    #[error("video shape {found:?} does not match dataset shape {expected:?}")]
    ShapeMismatch {
        expected: [usize; 3],
        found: [usize; 3],
    },
    #[error("duplicate class id {0}")]
    DuplicateClass(u32),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Umbrella error for operations that cross module boundaries.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("non-finite value during training at episode {episode}: {source}")]
    NonFinite { episode: usize, source: TensorError },
    #[error("gradient check failed for parameter {param}: {detail}")]
    GradCheck { param: String, detail: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
