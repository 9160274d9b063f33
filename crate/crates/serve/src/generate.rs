use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use dropnoise_core::io::{encode_png, render_grid, IoError};
use dropnoise_core::models::{generate, sample_latents, GenerationConfig, ModelError, Placement};
use dropnoise_core::nn::{MaskRng, Probability};
use dropnoise_core::rng::{derive_seed, stream_rng, StreamId};
use dropnoise_core::LayerStack;
use dropnoise_tensor::Tensor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const MAX_VARIANTS: usize = 64;
/// Server-assigned and derived seeds stay below 2^53 so JSON clients keep them exact.
pub const MAX_ASSIGNED_SEED: u64 = 1 << 53;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlacementChoice {
    All,
    First,
}

impl From<PlacementChoice> for Placement {
    fn from(p: PlacementChoice) -> Self {
        match p {
            PlacementChoice::All => Placement::AllHidden,
            PlacementChoice::First => Placement::FirstHiddenOnly,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateRequest {
    pub model: String,
    #[serde(default)]
    pub seed: Option<u64>,
    pub p_dropout: f64,
    pub p_scale: f64,
    #[serde(default = "default_placement")]
    pub placement: PlacementChoice,
    pub variants: usize,
    /// Explicit seeds for variants 1..K; derived from `seed` when absent.
    #[serde(default)]
    pub mask_seeds: Option<Vec<u64>>,
}

fn default_placement() -> PlacementChoice {
    PlacementChoice::All
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub index: usize,
    pub baseline: bool,
    pub mask_seed: Option<u64>,
    pub png: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerateResponse {
    pub model: String,
    pub seed: u64,
    pub p_dropout: f64,
    pub p_scale: f64,
    pub placement: PlacementChoice,
    pub variants: Vec<Variant>,
}

#[derive(Debug, Error)]
pub enum RequestError {
    #[error("{name} = {value} is outside [0, 1)")]
    Probability { name: &'static str, value: f64 },

    #[error("variants must be between 1 and {MAX_VARIANTS}, got {0}")]
    VariantCount(usize),

    #[error("{given} mask seeds for {expected} noised variants")]
    MaskSeeds { given: usize, expected: usize },

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Io(#[from] IoError),
}

/// Validated request parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub seed: u64,
    pub config: GenerationConfig,
    pub mask_seeds: Vec<u64>,
}

fn probability(name: &'static str, value: f64) -> Result<Probability, RequestError> {
    Probability::new(value).map_err(|_| RequestError::Probability { name, value })
}

/// Seed of noised variant `k` (1-based) for latent seed `seed`, below 2^53.
pub fn variant_mask_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, &[k as u64]) % MAX_ASSIGNED_SEED
}

pub fn plan(req: &GenerateRequest, assigned_seed: impl FnOnce() -> u64) -> Result<Plan, RequestError> {
    let p_dropout = probability("p_dropout", req.p_dropout)?;
    let p_scale = probability("p_scale", req.p_scale)?;
    if req.variants == 0 || req.variants > MAX_VARIANTS {
        return Err(RequestError::VariantCount(req.variants));
    }
    let seed = req.seed.unwrap_or_else(assigned_seed);
    let mask_seeds = match &req.mask_seeds {
        Some(s) if s.len() != req.variants - 1 => {
            return Err(RequestError::MaskSeeds { given: s.len(), expected: req.variants - 1 })
        }
        Some(s) => s.clone(),
        None => (1..req.variants).map(|k| variant_mask_seed(seed, k)).collect(),
    };
    Ok(Plan { seed, config: GenerationConfig::new(p_dropout, p_scale, req.placement.into()), mask_seeds })
}

/// Runs all K variants as one batch: item 0 without noise, item k on its own mask stream.
pub fn render(generator: &LayerStack<f32>, plan: &Plan) -> Result<Vec<Tensor<f32>>, RequestError> {
    let latent_dim = generator.input_shape()[0];
    let z = sample_latents::<f32>(1, latent_dim, &mut stream_rng(plan.seed, StreamId::LATENTS));
    let k = plan.mask_seeds.len() + 1;
    let batch = Tensor::new(vec![k, latent_dim], z.data().repeat(k)).expect("latent batch");
    let mut streams = vec![None];
    streams.extend(plan.mask_seeds.iter().map(|&s| Some(stream_rng(s, StreamId::GENERATION))));
    let mut rng = MaskRng::PerItem(streams);
    let images = generate(generator, &batch, &plan.config, &mut rng)?;
    Ok((0..k).map(|i| images.slice_outer(i, i + 1).expect("item in batch")).collect())
}

pub fn respond(req: &GenerateRequest, generator: &LayerStack<f32>, plan: &Plan) -> Result<GenerateResponse, RequestError> {
    let images = render(generator, plan)?;
    let mut variants = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let png = encode_png(&render_grid(img, 1, 1)?)?;
        variants.push(Variant {
            index: i,
            baseline: i == 0,
            mask_seed: i.checked_sub(1).map(|j| plan.mask_seeds[j]),
            png: STANDARD.encode(png),
        });
    }
    Ok(GenerateResponse {
        model: req.model.clone(),
        seed: plan.seed,
        p_dropout: req.p_dropout,
        p_scale: req.p_scale,
        placement: req.placement,
        variants,
    })
}

pub fn assign_seed() -> u64 {
    rand::random::<u64>() % MAX_ASSIGNED_SEED
}
