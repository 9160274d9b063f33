//! Dropout with separately controlled drop and scale probabilities.
//!
//! Three regimes are supported:
//!
//! * standard: train keeps each unit with probability `q = 1 − p`, generation
//!   multiplies every unit by `q`;
//! * inverted: train rescales surviving units by `1/q`, generation is the
//!   identity;
//! * generation noise: masks are sampled at generation time with drop
//!   probability `p_dropout` and survivors are rescaled by `1/(1 − p_scale)`,
//!   the two probabilities chosen independently.

use std::fmt;

use dropnoise_tensor::{Graph, Scalar, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::NnError;
use crate::rng::StreamId;

/// Probability in `[0, 1)`. One is excluded: it would zero a layer or
/// divide by zero when used as a scale probability.
#[derive(Clone, Copy, Debug, Default, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub const ZERO: Self = Self(0.0);

    pub fn new(p: f64) -> Result<Self, NnError> {
        if (0.0..1.0).contains(&p) {
            Ok(Self(p))
        } else {
            Err(NnError::Probability(p))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }

    /// `1 − p`, always positive.
    pub fn complement(self) -> f64 {
        1.0 - self.0
    }

    pub fn is_zero(self) -> bool {
        self.0 == 0.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = NnError;

    fn try_from(p: f64) -> Result<Self, NnError> {
        Self::new(p)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

impl fmt::Display for Probability {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DropoutMode {
    Standard,
    Inverted,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    Train,
    Generation,
    GenerationNoise,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DropoutSpec {
    pub mode: DropoutMode,
    pub p_train: Probability,
    pub p_dropout: Probability,
    pub p_scale: Probability,
    pub stream: StreamId,
}

impl DropoutSpec {
    /// Inverted dropout for training with no generation-time noise.
    pub fn inverted(p_train: Probability) -> Self {
        Self {
            mode: DropoutMode::Inverted,
            p_train,
            p_dropout: Probability::ZERO,
            p_scale: Probability::ZERO,
            stream: StreamId::GENERATION,
        }
    }

    pub fn standard(p_train: Probability) -> Self {
        Self { mode: DropoutMode::Standard, ..Self::inverted(p_train) }
    }

    pub fn with_generation(self, p_dropout: Probability, p_scale: Probability) -> Self {
        Self { p_dropout, p_scale, ..self }
    }
}

/// Sampled binary mask; `1` keeps a unit.
#[derive(Clone, Debug, PartialEq)]
pub struct DropoutMask {
    pub shape: Vec<usize>,
    pub keep: Vec<u8>,
    pub drop_probability: f64,
    /// Word position of the shared stream before sampling, when sampled
    /// from a shared stream.
    pub stream_position: Option<u128>,
}

impl DropoutMask {
    pub fn zero_fraction(&self) -> f64 {
        self.keep.iter().filter(|&&k| k == 0).count() as f64 / self.keep.len() as f64
    }

    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let data = self.keep.iter().map(|&k| if k == 1 { T::one() } else { T::zero() }).collect();
        Tensor::new(self.shape.clone(), data).expect("mask shape matches its length")
    }
}

/// Source of Bernoulli masks.
///
/// `Shared` draws every element of a batch from one stream. `PerItem` gives
/// each batch item its own stream; an item with `None` passes through
/// untouched, which lets a noise-free baseline share a batch with noised
/// variants.
#[derive(Clone, Debug)]
pub enum MaskRng {
    Shared(ChaCha8Rng),
    PerItem(Vec<Option<ChaCha8Rng>>),
}

impl MaskRng {
    pub fn shared(seed: u64, stream: StreamId) -> Self {
        Self::Shared(crate::rng::stream_rng(seed, stream))
    }

    /// Word position of the shared stream; `None` for per-item sources.
    pub fn position(&self) -> Option<u128> {
        match self {
            Self::Shared(r) => Some(r.get_word_pos()),
            Self::PerItem(_) => None,
        }
    }

    /// Samples a keep-mask in which each element is dropped with
    /// probability `p_drop`, plus the per-element pass-through flags.
    fn sample(&mut self, shape: &[usize], p_drop: f64) -> Result<(DropoutMask, Option<Vec<bool>>), NnError> {
        let len: usize = shape.iter().product();
        let bernoulli = |r: &mut ChaCha8Rng| u8::from(r.random::<f64>() >= p_drop);
        match self {
            Self::Shared(r) => {
                let position = Some(r.get_word_pos());
                let keep = (0..len).map(|_| bernoulli(r)).collect();
                Ok((DropoutMask { shape: shape.to_vec(), keep, drop_probability: p_drop, stream_position: position }, None))
            }
            Self::PerItem(items) => {
                let batch = shape.first().copied().unwrap_or(1);
                if items.len() != batch {
                    return Err(NnError::MaskStreams { streams: items.len(), batch });
                }
                let per = len / batch;
                let mut keep = Vec::with_capacity(len);
                let mut passthrough = Vec::with_capacity(len);
                for item in items.iter_mut() {
                    match item {
                        Some(r) => {
                            keep.extend((0..per).map(|_| bernoulli(r)));
                            passthrough.extend(std::iter::repeat_n(false, per));
                        }
                        None => {
                            keep.extend(std::iter::repeat_n(1u8, per));
                            passthrough.extend(std::iter::repeat_n(true, per));
                        }
                    }
                }
                let mask = DropoutMask { shape: shape.to_vec(), keep, drop_probability: p_drop, stream_position: None };
                Ok((mask, Some(passthrough)))
            }
        }
    }
}

/// What a dropout layer does to its input for one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum DropoutAction {
    Identity,
    Scale(f64),
    /// Per-element multipliers `mask · factor` (pass-through items get 1).
    Masked { mask: DropoutMask, weights: Vec<f64> },
}

/// Decides the dropout action for `phase`, sampling a mask when required.
/// A zero drop probability never samples, so it consumes no randomness.
pub fn plan_dropout(shape: &[usize], spec: &DropoutSpec, phase: Phase, rng: &mut MaskRng) -> Result<DropoutAction, NnError> {
    let (p_drop, factor) = match (phase, spec.mode) {
        (Phase::Train, DropoutMode::Standard) => (spec.p_train.get(), 1.0),
        (Phase::Train, DropoutMode::Inverted) => (spec.p_train.get(), 1.0 / spec.p_train.complement()),
        (Phase::Generation, DropoutMode::Standard) => {
            return Ok(if spec.p_train.is_zero() { DropoutAction::Identity } else { DropoutAction::Scale(spec.p_train.complement()) })
        }
        (Phase::Generation, DropoutMode::Inverted) => return Ok(DropoutAction::Identity),
        (Phase::GenerationNoise, _) => (spec.p_dropout.get(), 1.0 / spec.p_scale.complement()),
    };
    if p_drop == 0.0 {
        return Ok(match (factor == 1.0, rng) {
            (true, _) => DropoutAction::Identity,
            (false, MaskRng::Shared(_)) => DropoutAction::Scale(factor),
            (false, MaskRng::PerItem(items)) => {
                // Scale only the items that carry a stream.
                let batch = shape.first().copied().unwrap_or(1);
                if items.len() != batch {
                    return Err(NnError::MaskStreams { streams: items.len(), batch });
                }
                let len: usize = shape.iter().product();
                let per = len / batch;
                let weights = items
                    .iter()
                    .flat_map(|it| std::iter::repeat_n(if it.is_some() { factor } else { 1.0 }, per))
                    .collect();
                let mask = DropoutMask { shape: shape.to_vec(), keep: vec![1; len], drop_probability: 0.0, stream_position: None };
                DropoutAction::Masked { mask, weights }
            }
        });
    }
    let (mask, passthrough) = rng.sample(shape, p_drop)?;
    let weights = match passthrough {
        None => mask.keep.iter().map(|&k| f64::from(k) * factor).collect(),
        Some(pass) => mask.keep.iter().zip(pass).map(|(&k, p)| if p { 1.0 } else { f64::from(k) * factor }).collect(),
    };
    Ok(DropoutAction::Masked { mask, weights })
}

/// Pure dropout forward pass.
pub fn dropout_forward<T: Scalar>(
    x: &Tensor<T>,
    spec: &DropoutSpec,
    phase: Phase,
    rng: &mut MaskRng,
) -> Result<(Tensor<T>, Option<DropoutMask>), NnError> {
    match plan_dropout(x.shape(), spec, phase, rng)? {
        DropoutAction::Identity => Ok((x.clone(), None)),
        DropoutAction::Scale(s) => {
            let s = T::from_f64_lossy(s);
            Ok((x.map(|v| v * s), None))
        }
        DropoutAction::Masked { mask, weights } => {
            let mut out = x.clone();
            for (o, &w) in out.data_mut().iter_mut().zip(&weights) {
                *o = *o * T::from_f64_lossy(w);
            }
            Ok((out, Some(mask)))
        }
    }
}

/// Dropout recorded on a graph; the mask acts as a constant multiplier.
pub fn dropout_graph<T: Scalar>(
    g: &mut Graph<T>,
    x: Var,
    spec: &DropoutSpec,
    phase: Phase,
    rng: &mut MaskRng,
) -> Result<(Var, Option<DropoutMask>), NnError> {
    let shape = g.shape(x).to_vec();
    match plan_dropout(&shape, spec, phase, rng)? {
        DropoutAction::Identity => Ok((x, None)),
        DropoutAction::Scale(s) => Ok((g.mul_scalar(x, T::from_f64_lossy(s))?, None)),
        DropoutAction::Masked { mask, weights } => {
            let w = Tensor::new(shape, weights.into_iter().map(T::from_f64_lossy).collect())?;
            Ok((g.mul_const(x, w)?, Some(mask)))
        }
    }
}
