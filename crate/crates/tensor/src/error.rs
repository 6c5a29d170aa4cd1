use std::fmt;

pub type Result<T> = std::result::Result<T, TensorError>;

/// Errors raised by tensor construction and tape operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Operand shapes are incompatible for the named operation.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A row/element index is outside the operand's extent.
    IndexOutOfRange {
        op: &'static str,
        index: usize,
        len: usize,
    },
    /// The operation requires a scalar (single-element) tensor.
    NotScalar { op: &'static str, shape: Vec<usize> },
    /// The stored data length does not match the product of extents.
    BadConstruction { shape: Vec<usize>, len: usize },
    /// A softmax row (or masked mean) has no unmasked entries.
    EmptyMask { op: &'static str },
    /// A parameter name was registered twice.
    DuplicateParam { name: String },
    /// No parameter with the requested name exists.
    UnknownParam { name: String },
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch between {lhs:?} and {rhs:?}")
            }
            TensorError::IndexOutOfRange { op, index, len } => {
                write!(f, "{op}: index {index} out of range for extent {len}")
            }
            TensorError::NotScalar { op, shape } => {
                write!(f, "{op}: expected a scalar tensor, got shape {shape:?}")
            }
            TensorError::BadConstruction { shape, len } => {
                write!(f, "tensor of shape {shape:?} cannot hold {len} values")
            }
            TensorError::EmptyMask { op } => {
                write!(f, "{op}: mask excludes every entry")
            }
            TensorError::DuplicateParam { name } => {
                write!(f, "parameter name {name:?} already registered")
            }
            TensorError::UnknownParam { name } => {
                write!(f, "no parameter named {name:?}")
            }
        }
    }
}

impl std::error::Error for TensorError {}
