use thiserror::Error;

/// Errors produced by tensor construction, forward ops, and training steps.
#[derive(Debug, Clone, Error)]
pub enum DiffError {
    #[error("{op}: shape mismatch between {lhs} and {rhs}")]
    ShapeMismatch {
        op: &'static str,
        lhs: String,
        rhs: String,
    },
    #[error("{op}: unsupported operand shape {shape} ({detail})")]
    InvalidShape {
        op: &'static str,
        shape: String,
        detail: String,
    },
    #[error("{op} expects {expected} operand(s), got {got}")]
    Arity {
        op: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("log: non-positive input {value} at index {index}")]
    LogDomain { value: String, index: usize },
    #[error("shape {shape} implies {expected} elements but data has {got}")]
    ShapeData {
        shape: String,
        expected: usize,
        got: usize,
    },
    #[error("backward requires a scalar loss, got shape {shape}")]
    NonScalarLoss { shape: String },
    #[error("adam: non-finite gradient for parameter {param} at coordinate {coord}")]
    NonFiniteGrad { param: usize, coord: usize },
    #[error("{context}: {detail}")]
    InvalidArgument {
        context: &'static str,
        detail: String,
    },
}

pub type Result<T> = std::result::Result<T, DiffError>;

pub(crate) fn fmt_shape(shape: &[usize]) -> String {
    if shape.is_empty() {
        "scalar".to_string()
    } else {
        shape
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join("x")
    }
}
