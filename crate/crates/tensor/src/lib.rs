//! Dense CPU tensors and a reverse-mode tape for small convolutional GANs.

pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod ops;
pub mod scalar;
pub mod tensor;

pub use error::{Result, TensorError};
pub use graph::{GradRecord, Gradients, Graph, ParamId, Var};
pub use ops::conv::{conv2d, conv2d_transpose, conv_output_size, conv_transpose_output_size, ConvParams};
pub use ops::norm::{batchnorm_eval, batchnorm_train, BatchStats, NormConfig};
pub use scalar::Scalar;
pub use tensor::{activation, elementwise, matmul, ActivationKind, ElementwiseOp, Operand, Tensor};
