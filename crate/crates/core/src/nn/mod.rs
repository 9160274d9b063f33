//! Layer descriptors, layer stacks and dropout.

mod dropout;
mod stack;

pub use dropout::{
    dropout_forward, dropout_graph, plan_dropout, DropoutAction, DropoutMask, DropoutMode, DropoutSpec, MaskRng, Phase,
    Probability,
};
pub use stack::{Activation, BoundParams, Forward, LayerKind, LayerOverride, LayerStack, Overrides, StackOutput};

use dropnoise_tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("probability {0} outside [0, 1)")]
    Probability(f64),

    #[error("layer {layer}: expected input shape {expected:?}, got {actual:?}")]
    ShapeMismatch { layer: usize, expected: Vec<usize>, actual: Vec<usize> },

    #[error("layer {layer}: {source}")]
    Layer { layer: usize, source: TensorError },

    #[error("override for layer {0}, which is not a dropout layer")]
    NotDropout(usize),

    #[error("{streams} per-item mask streams for a batch of {batch}")]
    MaskStreams { streams: usize, batch: usize },

    #[error("missing parameter `{0}`")]
    MissingParam(String),

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("parameter `{name}` has shape {actual:?}, expected {expected:?}")]
    ParamShape { name: String, expected: Vec<usize>, actual: Vec<usize> },

    #[error(transparent)]
    Tensor(#[from] TensorError),
}
