use crate::tape::OpKind;

/// Errors shared by all modules of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{kind}: operand shapes {lhs:?} and {rhs:?} do not conform")]
    ShapeMismatch {
        kind: OpKind,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{kind}: invalid operand shape {shape:?}: {reason}")]
    InvalidShape {
        kind: OpKind,
        shape: Vec<usize>,
        reason: String,
    },

    #[error("{kind}: non-finite value in operand or result")]
    NonFinite { kind: OpKind },

    #[error("tensor of shape {shape:?} expects {expected} values, got {got}")]
    BadTensorData {
        shape: Vec<usize>,
        expected: usize,
        got: usize,
    },

    #[error("row index {index} out of bounds for table with {rows} rows")]
    RowOutOfBounds { index: usize, rows: usize },

    #[error("backward requires a scalar loss, got shape {shape:?}")]
    LossNotScalar { shape: Vec<usize> },

    #[error("loss builder is not deterministic: {first} vs {second}")]
    NonDeterministicLoss { first: f64, second: f64 },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
