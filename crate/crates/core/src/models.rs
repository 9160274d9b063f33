//! DCGAN-style generator and discriminator construction, dropout placement
//! and the generation entry point.

use dropnoise_tensor::{Scalar, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{
    Activation, DropoutSpec, Forward, LayerKind, LayerOverride, LayerStack, MaskRng, NnError, Overrides, Phase,
    Probability,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("generator produces {actual:?} but images are {expected:?}")]
    OutputShape { expected: Vec<usize>, actual: Vec<usize> },

    #[error("discriminator must reduce to a 1x1 map, got {0:?}")]
    DiscriminatorOutput(Vec<usize>),

    #[error("a model needs at least one hidden block")]
    NoHiddenBlocks,

    #[error("latent batch has shape {actual:?}, expected [N, {latent_dim}]")]
    LatentShape { latent_dim: usize, actual: Vec<usize> },

    #[error("generation noise requested but the generator has no dropout layers")]
    NoDropoutLayers,

    #[error(transparent)]
    Nn(#[from] NnError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ImageShape {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

impl ImageShape {
    pub const MNIST: Self = Self { channels: 1, height: 28, width: 28 };

    pub fn dims(&self) -> Vec<usize> {
        vec![self.channels, self.height, self.width]
    }

    pub fn pixels(&self) -> usize {
        self.channels * self.height * self.width
    }
}

/// Which generator hidden blocks end in a dropout layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Placement {
    None,
    AllHidden,
    /// Only the first block after the latent input.
    FirstHiddenOnly,
}

impl Placement {
    fn includes(self, block: usize) -> bool {
        match self {
            Placement::None => false,
            Placement::AllHidden => true,
            Placement::FirstHiddenOnly => block == 0,
        }
    }
}

/// Convolution geometry of one block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub batchnorm: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub latent_dim: usize,
    /// Transposed-conv → batchnorm → ReLU (→ dropout) blocks.
    pub hidden: Vec<ConvBlock>,
    /// Final transposed conv; followed by tanh.
    pub output: ConvBlock,
    pub image: ImageShape,
    pub dropout: DropoutSpec,
    pub placement: Placement,
}

impl GeneratorSpec {
    /// Latent 64 → 128×7×7 → 64×14×14 → 1×28×28.
    ///
    /// The latent vector enters as a 64×1×1 map, so the first 7×7
    /// transposed convolution is a dense projection to 128×7×7.
    pub fn desk(dropout: DropoutSpec, placement: Placement) -> Self {
        Self {
            latent_dim: 64,
            hidden: vec![
                ConvBlock { out_channels: 128, kernel: 7, stride: 1, padding: 0, batchnorm: true },
                ConvBlock { out_channels: 64, kernel: 4, stride: 2, padding: 1, batchnorm: true },
            ],
            output: ConvBlock { out_channels: 1, kernel: 4, stride: 2, padding: 1, batchnorm: false },
            image: ImageShape::MNIST,
            dropout,
            placement,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorBlock {
    pub conv: ConvBlock,
    pub leaky_slope: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorSpec {
    pub image: ImageShape,
    /// Conv → batchnorm → LeakyReLU blocks.
    pub hidden: Vec<DiscriminatorBlock>,
    /// Final conv to one channel over a 1×1 map; followed by sigmoid.
    pub output: ConvBlock,
}

impl DiscriminatorSpec {
    /// 1×28×28 → 64×14×14 → 128×7×7 → 1.
    pub fn desk() -> Self {
        Self {
            image: ImageShape::MNIST,
            hidden: vec![
                DiscriminatorBlock {
                    conv: ConvBlock { out_channels: 64, kernel: 4, stride: 2, padding: 1, batchnorm: true },
                    leaky_slope: 0.2,
                },
                DiscriminatorBlock {
                    conv: ConvBlock { out_channels: 128, kernel: 4, stride: 2, padding: 1, batchnorm: true },
                    leaky_slope: 0.2,
                },
            ],
            output: ConvBlock { out_channels: 1, kernel: 7, stride: 1, padding: 0, batchnorm: false },
        }
    }
}

/// Generator and discriminator specifications of one GAN.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub generator: GeneratorSpec,
    pub discriminator: DiscriminatorSpec,
}

impl Architecture {
    /// Desk geometry with inverted dropout `p_train` after every generator hidden block.
    pub fn desk(p_train: Probability) -> Self {
        Self {
            generator: GeneratorSpec::desk(DropoutSpec::inverted(p_train), Placement::AllHidden),
            discriminator: DiscriminatorSpec::desk(),
        }
    }
}

pub const GENERATOR_PREFIX: &str = "gen";
pub const DISCRIMINATOR_PREFIX: &str = "disc";

pub fn generator_layers(spec: &GeneratorSpec) -> Result<Vec<LayerKind>, ModelError> {
    if spec.hidden.is_empty() {
        return Err(ModelError::NoHiddenBlocks);
    }
    let mut layers = vec![LayerKind::Reshape { shape: vec![spec.latent_dim, 1, 1] }];
    let mut channels = spec.latent_dim;
    for (i, b) in spec.hidden.iter().enumerate() {
        layers.push(LayerKind::ConvTranspose2d {
            in_channels: channels,
            out_channels: b.out_channels,
            kernel: b.kernel,
            stride: b.stride,
            padding: b.padding,
            bias: !b.batchnorm,
        });
        if b.batchnorm {
            layers.push(LayerKind::BatchNorm { channels: b.out_channels });
        }
        layers.push(LayerKind::Activation { activation: Activation::Relu });
        if spec.placement.includes(i) {
            layers.push(LayerKind::Dropout { spec: spec.dropout });
        }
        channels = b.out_channels;
    }
    let o = spec.output;
    layers.push(LayerKind::ConvTranspose2d {
        in_channels: channels,
        out_channels: o.out_channels,
        kernel: o.kernel,
        stride: o.stride,
        padding: o.padding,
        bias: true,
    });
    layers.push(LayerKind::Activation { activation: Activation::Tanh });
    Ok(layers)
}

pub fn discriminator_layers(spec: &DiscriminatorSpec) -> Result<Vec<LayerKind>, ModelError> {
    if spec.hidden.is_empty() {
        return Err(ModelError::NoHiddenBlocks);
    }
    let mut layers = Vec::new();
    let mut channels = spec.image.channels;
    for b in &spec.hidden {
        let c = b.conv;
        layers.push(LayerKind::Conv2d {
            in_channels: channels,
            out_channels: c.out_channels,
            kernel: c.kernel,
            stride: c.stride,
            padding: c.padding,
            bias: !c.batchnorm,
        });
        if c.batchnorm {
            layers.push(LayerKind::BatchNorm { channels: c.out_channels });
        }
        layers.push(LayerKind::Activation { activation: Activation::LeakyRelu { slope: b.leaky_slope } });
        channels = c.out_channels;
    }
    let o = spec.output;
    layers.push(LayerKind::Conv2d {
        in_channels: channels,
        out_channels: o.out_channels,
        kernel: o.kernel,
        stride: o.stride,
        padding: o.padding,
        bias: true,
    });
    layers.push(LayerKind::Reshape { shape: vec![o.out_channels] });
    layers.push(LayerKind::Activation { activation: Activation::Sigmoid });
    Ok(layers)
}

fn check_generator<T: Scalar>(spec: &GeneratorSpec, stack: &LayerStack<T>) -> Result<(), ModelError> {
    if stack.output_shape() != spec.image.dims().as_slice() {
        return Err(ModelError::OutputShape { expected: spec.image.dims(), actual: stack.output_shape().to_vec() });
    }
    Ok(())
}

fn check_discriminator<T: Scalar>(stack: &LayerStack<T>) -> Result<(), ModelError> {
    // The reshape before the sigmoid only succeeds for a 1×1 map of width 1.
    let shapes = stack.layer_shapes();
    let conv_out = &shapes[shapes.len() - 3];
    if conv_out.as_slice() != [1, 1, 1] {
        return Err(ModelError::DiscriminatorOutput(conv_out.clone()));
    }
    Ok(())
}

pub fn build_generator<T: Scalar>(spec: &GeneratorSpec, init: &mut impl Rng) -> Result<LayerStack<T>, ModelError> {
    let stack = LayerStack::new(GENERATOR_PREFIX, vec![spec.latent_dim], generator_layers(spec)?, init)?;
    check_generator(spec, &stack)?;
    Ok(stack)
}

pub fn build_discriminator<T: Scalar>(spec: &DiscriminatorSpec, init: &mut impl Rng) -> Result<LayerStack<T>, ModelError> {
    let layers = discriminator_layers(spec)?;
    let stack = LayerStack::new(DISCRIMINATOR_PREFIX, spec.image.dims(), layers, init)
        .map_err(|e| match e {
            NnError::ShapeMismatch { actual, .. } => ModelError::DiscriminatorOutput(actual),
            other => ModelError::Nn(other),
        })?;
    check_discriminator(&stack)?;
    Ok(stack)
}

/// Restores a generator from named tensors, validating them against `spec`.
pub fn restore_generator<T: Scalar>(
    spec: &GeneratorSpec,
    tensors: std::collections::BTreeMap<String, Tensor<T>>,
) -> Result<LayerStack<T>, ModelError> {
    let stack = LayerStack::from_tensors(GENERATOR_PREFIX, vec![spec.latent_dim], generator_layers(spec)?, tensors)?;
    check_generator(spec, &stack)?;
    Ok(stack)
}

pub fn restore_discriminator<T: Scalar>(
    spec: &DiscriminatorSpec,
    tensors: std::collections::BTreeMap<String, Tensor<T>>,
) -> Result<LayerStack<T>, ModelError> {
    let stack = LayerStack::from_tensors(DISCRIMINATOR_PREFIX, spec.image.dims(), discriminator_layers(spec)?, tensors)?;
    check_discriminator(&stack)?;
    Ok(stack)
}

/// Generation-time dropout settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationConfig {
    pub p_dropout: Probability,
    pub p_scale: Probability,
    /// Restricts noise to a subset of the generator's dropout layers.
    pub placement: Option<Placement>,
}

impl GenerationConfig {
    /// No generation noise: the unaltered generator.
    pub const BASELINE: Self = Self { p_dropout: Probability::ZERO, p_scale: Probability::ZERO, placement: None };

    pub fn new(p_dropout: Probability, p_scale: Probability, placement: Placement) -> Self {
        Self { p_dropout, p_scale, placement: Some(placement) }
    }

    pub fn is_baseline(&self) -> bool {
        self.p_dropout.is_zero() && self.p_scale.is_zero()
    }

    /// Per-layer overrides for `gen`: the selected dropout layers switch to
    /// generation noise, every other dropout layer to plain generation.
    pub fn overrides<T: Scalar>(&self, gen: &LayerStack<T>) -> Result<Overrides, ModelError> {
        let layers = gen.dropout_layers();
        let mut ov = Overrides::default();
        if self.is_baseline() {
            return Ok(ov);
        }
        if layers.is_empty() {
            return Err(ModelError::NoDropoutLayers);
        }
        let placement = self.placement.unwrap_or(Placement::AllHidden);
        for (block, &layer) in layers.iter().enumerate() {
            let LayerKind::Dropout { spec } = gen.layers()[layer] else { unreachable!("dropout layer index") };
            let phase = if placement.includes(block) { Phase::GenerationNoise } else { Phase::Generation };
            ov.insert(layer, LayerOverride { spec: spec.with_generation(self.p_dropout, self.p_scale), phase });
        }
        Ok(ov)
    }
}

/// Runs the generator on latents `z` (`[N, latent_dim]`); images in `[−1, 1]`.
/// The baseline configuration is deterministic and consumes no randomness.
pub fn generate<T: Scalar>(
    gen: &LayerStack<T>,
    z: &Tensor<T>,
    cfg: &GenerationConfig,
    rng: &mut MaskRng,
) -> Result<Tensor<T>, ModelError> {
    let latent_dim = gen.input_shape()[0];
    if z.rank() != 2 || z.shape()[1] != latent_dim {
        return Err(ModelError::LatentShape { latent_dim, actual: z.shape().to_vec() });
    }
    let ov = cfg.overrides(gen)?;
    let opts = Forward::phase(Phase::Generation).with_overrides(&ov);
    Ok(gen.forward(z, &opts, rng)?)
}

/// Standard-normal latent batch.
pub fn sample_latents<T: Scalar>(n: usize, latent_dim: usize, rng: &mut impl Rng) -> Tensor<T> {
    use rand_distr::StandardNormal;
    Tensor::from_fn(vec![n, latent_dim], |_| T::from_f64_lossy(rng.sample::<f64, _>(StandardNormal)))
        .expect("positive latent dimensions")
}
