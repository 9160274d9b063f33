//! Generation-time dropout for GAN output variety.

pub mod io;
pub mod models;
pub mod nn;
pub mod rng;
pub mod training;
pub mod variety;

pub use models::{
    build_discriminator, build_generator, generate, sample_latents, Architecture, DiscriminatorSpec, GenerationConfig,
    GeneratorSpec, ImageShape, ModelError, Placement,
};
pub use nn::{DropoutMode, DropoutSpec, LayerStack, MaskRng, Phase, Probability};
