use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("shape {shape:?} holds {expected} values but {actual} were given")]
    LengthMismatch { shape: Vec<usize>, expected: usize, actual: usize },

    #[error("zero-sized dimension in shape {0:?}")]
    ZeroDimension(Vec<usize>),

    #[error("{op}: shape mismatch between {left:?} and {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },

    #[error("{op}: expected rank {expected}, got shape {shape:?}")]
    Rank { op: &'static str, expected: usize, shape: Vec<usize> },

    #[error("division by a tensor containing zero at flat index {index}")]
    DivisionByZero { index: usize },

    #[error("{op}: non-positive output dimension for input {input}, kernel {kernel}, stride {stride}, padding {padding}")]
    Geometry { op: &'static str, input: usize, kernel: usize, stride: usize, padding: usize },

    #[error("stride must be at least 1")]
    ZeroStride,

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("parameter `{0}` registered twice in one graph")]
    DuplicateParam(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;
