//! Adversarial training with non-saturating BCE losses.

mod monitor;
mod optim;

pub use monitor::{mode_collapse_monitor, CollapseReport, COLLAPSE_FRACTION};
pub use optim::{Optimizer, OptimizerConfig};

use std::path::PathBuf;

use dropnoise_tensor::{Graph, Scalar, Tensor, TensorError};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::io::Dataset;
use crate::models::{build_discriminator, build_generator, sample_latents, Architecture, ModelError};
use crate::nn::{Forward, LayerStack, MaskRng, NnError, Phase, Probability};
use crate::rng::{derive_seed, stream_rng, StreamId};
use crate::variety::mean_pairwise_distance;

/// Samples drawn for each mode-collapse check.
pub const MONITOR_SAMPLES: usize = 64;
/// Dataset images used to estimate the reference pairwise distance.
pub const REFERENCE_SAMPLES: usize = 512;

const SUBSET_LABEL: u64 = 0x5ab5e7;
const MONITOR_LABEL: u64 = 0x0b5e_7ab1e;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),

    #[error("training diverged at step {step} (generator loss {g_loss}, discriminator loss {d_loss})")]
    Diverged { step: u64, g_loss: f64, d_loss: f64, log: Box<TrainLog> },

    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub p_train: Probability,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    /// Images drawn (seeded) from the dataset; all of them when `None`.
    pub dataset_size: Option<usize>,
    /// Steps between mode-collapse checks; checks also run after every epoch.
    pub monitor_every: usize,
    /// Destination of the trained checkpoint. Not persisted, so checkpoint
    /// bytes do not depend on where they are written.
    #[serde(skip)]
    pub checkpoint_out: Option<PathBuf>,
}

impl TrainConfig {
    /// 5,000 images, 5 epochs, batch 64, Adam 2e-4 / 0.5.
    pub fn desk(p_train: Probability, seed: u64) -> Self {
        Self {
            p_train,
            epochs: 5,
            batch_size: 64,
            optimizer: OptimizerConfig::DCGAN_ADAM,
            seed,
            dataset_size: Some(5000),
            monitor_every: 0,
            checkpoint_out: None,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.optimizer.learning_rate()
    }

    pub fn validate(&self, available: usize) -> Result<usize, TrainError> {
        if self.batch_size < 2 {
            return Err(TrainError::Config(format!("batch size {} < 2", self.batch_size)));
        }
        if self.epochs == 0 {
            return Err(TrainError::Config("zero epochs".into()));
        }
        let n = self.dataset_size.unwrap_or(available);
        if n > available {
            return Err(TrainError::Config(format!("dataset slice of {n} images but only {available} available")));
        }
        if n < self.batch_size {
            return Err(TrainError::Config(format!("dataset slice of {n} images is smaller than one batch")));
        }
        Ok(n)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: usize,
    pub g_loss: f64,
    pub d_loss: f64,
    pub d_real_accuracy: f64,
    pub d_fake_accuracy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonitorRecord {
    pub step: u64,
    pub report: CollapseReport,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub steps: Vec<StepRecord>,
    pub monitors: Vec<MonitorRecord>,
    pub reference_distance: f64,
}

impl TrainLog {
    pub fn collapse_flagged(&self) -> bool {
        self.monitors.iter().any(|m| m.report.flagged)
    }

    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("log serializes");
        hex::encode(Sha256::digest(json))
    }
}

/// Losses and discriminator accuracies of one step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLosses {
    pub g_loss: f64,
    pub d_loss: f64,
    pub d_real_accuracy: f64,
    pub d_fake_accuracy: f64,
}

/// Networks, optimizers and random streams of a training run.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub generator: LayerStack<T>,
    pub discriminator: LayerStack<T>,
    pub opt_g: Optimizer<T>,
    pub opt_d: Optimizer<T>,
    pub latent_rng: ChaCha8Rng,
    pub mask_rng: MaskRng,
    pub steps: u64,
}

fn targets<T: Scalar>(n: usize, value: f64) -> Tensor<T> {
    Tensor::full(vec![n, 1], T::from_f64_lossy(value)).expect("non-empty batch")
}

fn accuracy<T: Scalar>(logits: &Tensor<T>, real: bool) -> f64 {
    let hits = logits.data().iter().filter(|&&l| if real { l > T::zero() } else { l < T::zero() }).count();
    hits as f64 / logits.len() as f64
}

impl<T: Scalar> TrainState<T> {
    pub fn new(generator: LayerStack<T>, discriminator: LayerStack<T>, optimizer: OptimizerConfig, seed: u64) -> Self {
        Self {
            generator,
            discriminator,
            opt_g: Optimizer::new(optimizer),
            opt_d: Optimizer::new(optimizer),
            latent_rng: stream_rng(seed, StreamId::TRAIN),
            mask_rng: MaskRng::shared(seed, StreamId::TRAIN_MASKS),
            steps: 0,
        }
    }

    /// Fresh networks for `arch`, initialized from `seed`.
    pub fn init(arch: &Architecture, optimizer: OptimizerConfig, seed: u64) -> Result<Self, TrainError> {
        let mut init = stream_rng(seed, StreamId::INIT);
        let generator = build_generator(&arch.generator, &mut init)?;
        let discriminator = build_discriminator(&arch.discriminator, &mut init)?;
        Ok(Self::new(generator, discriminator, optimizer, seed))
    }

    /// One discriminator update followed by one generator update.
    pub fn step(&mut self, real: &Tensor<T>) -> Result<StepLosses, TrainError> {
        let latent_dim = self.generator.input_shape()[0];
        let z = sample_latents(real.shape()[0], latent_dim, &mut self.latent_rng);
        self.step_with_latent(real, &z)
    }

    pub fn step_with_latent(&mut self, real: &Tensor<T>, z: &Tensor<T>) -> Result<StepLosses, TrainError> {
        let train = Forward::phase(Phase::Train);
        let n = real.shape()[0];

        let mut gg = Graph::new();
        let zv = gg.input(z.clone());
        let gen_out = self.generator.forward_graph(&mut gg, zv, true, &train, &mut self.mask_rng)?;
        let fake = gg.value(gen_out.output).clone();

        // Discriminator: real and fake batches normalized separately.
        let mut gd = Graph::new();
        let d_bound = self.discriminator.bind(&mut gd, true)?;
        let rv = gd.input(real.clone());
        let fv = gd.input(fake);
        let logits = train.logits();
        let d_real = self.discriminator.forward_bound(&mut gd, &d_bound, rv, &logits, &mut self.mask_rng)?;
        let d_fake = self.discriminator.forward_bound(&mut gd, &d_bound, fv, &logits, &mut self.mask_rng)?;
        let loss_real = gd.bce_with_logits(d_real.output, targets(n, 1.0))?;
        let loss_fake = gd.bce_with_logits(d_fake.output, targets(n, 0.0))?;
        let d_loss = gd.add(loss_real, loss_fake)?;
        let d_grads = gd.backward(d_loss)?;
        let d_real_accuracy = accuracy(gd.value(d_real.output), true);
        let d_fake_accuracy = accuracy(gd.value(d_fake.output), false);
        let d_loss = gd.value(d_loss).item().expect("scalar loss").to_f64_lossy();
        self.opt_d.update(self.discriminator.params_mut(), &d_grads);
        self.discriminator.apply_batch_stats(&d_real.batch_stats)?;
        self.discriminator.apply_batch_stats(&d_fake.batch_stats)?;

        // Generator: updated discriminator frozen, fake labelled real.
        let d_frozen = self.discriminator.bind(&mut gg, false)?;
        let d_on_fake = self.discriminator.forward_bound(&mut gg, &d_frozen, gen_out.output, &logits, &mut self.mask_rng)?;
        let g_loss = gg.bce_with_logits(d_on_fake.output, targets(n, 1.0))?;
        let g_grads = gg.backward(g_loss)?;
        let g_loss = gg.value(g_loss).item().expect("scalar loss").to_f64_lossy();

        if !(g_loss.is_finite() && d_loss.is_finite()) || !g_grads.all_finite() || !d_grads.all_finite() {
            return Err(TrainError::Diverged { step: self.steps, g_loss, d_loss, log: Box::default() });
        }
        self.opt_g.update(self.generator.params_mut(), &g_grads);
        self.generator.apply_batch_stats(&gen_out.batch_stats)?;
        self.discriminator.apply_batch_stats(&d_on_fake.batch_stats)?;
        self.steps += 1;
        Ok(StepLosses { g_loss, d_loss, d_real_accuracy, d_fake_accuracy })
    }
}

/// Per-epoch progress.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Progress {
    pub epoch: usize,
    pub epochs: usize,
    pub step: u64,
    pub mean_g_loss: f64,
    pub mean_d_loss: f64,
    pub collapse: Option<CollapseReport>,
}

/// Trained networks and the full log.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub architecture: Architecture,
    pub config: TrainConfig,
    pub generator: LayerStack<f32>,
    pub discriminator: LayerStack<f32>,
    pub log: TrainLog,
}

/// Seeded selection of `n` dataset indices.
pub fn dataset_subset(available: usize, n: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..available).collect();
    let mut rng = stream_rng(derive_seed(seed, &[SUBSET_LABEL]), StreamId::TRAIN);
    idx.shuffle(&mut rng);
    idx.truncate(n);
    idx
}

fn monitor_samples(gen: &LayerStack<f32>, seed: u64) -> Result<Tensor<f32>, TrainError> {
    let mut rng = stream_rng(derive_seed(seed, &[MONITOR_LABEL]), StreamId::LATENTS);
    let z = sample_latents(MONITOR_SAMPLES, gen.input_shape()[0], &mut rng);
    let mut no_masks = MaskRng::shared(0, StreamId::GENERATION);
    Ok(gen.forward(&z, &Forward::phase(Phase::Generation), &mut no_masks)?)
}

/// Trains the desk architecture with dropout `cfg.p_train`.
pub fn train_gan(
    cfg: &TrainConfig,
    dataset: &Dataset,
    mut progress: impl FnMut(&Progress),
) -> Result<TrainOutcome, TrainError> {
    train_gan_with(&Architecture::desk(cfg.p_train), cfg, dataset, &mut progress)
}

pub fn train_gan_with(
    arch: &Architecture,
    cfg: &TrainConfig,
    dataset: &Dataset,
    mut progress: impl FnMut(&Progress),
) -> Result<TrainOutcome, TrainError> {
    let n = cfg.validate(dataset.len())?;
    if dataset.image_shape() != arch.generator.image.dims().as_slice() {
        return Err(TrainError::Config(format!(
            "dataset images {:?} do not match the generator output {:?}",
            dataset.image_shape(),
            arch.generator.image.dims()
        )));
    }
    let subset = dataset_subset(dataset.len(), n, cfg.seed);
    let reference = mean_pairwise_distance(&dataset.gather(&subset[..subset.len().min(REFERENCE_SAMPLES)]));
    let mut state = TrainState::<f32>::init(arch, cfg.optimizer, cfg.seed)?;
    let mut shuffle_rng = stream_rng(derive_seed(cfg.seed, &[SUBSET_LABEL, 1]), StreamId::TRAIN);
    let mut log = TrainLog { reference_distance: reference, ..TrainLog::default() };
    let mut order = subset;
    let batches = n / cfg.batch_size;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let first = log.steps.len();
        for b in 0..batches {
            let real = dataset.gather(&order[b * cfg.batch_size..(b + 1) * cfg.batch_size]);
            let l = match state.step(&real) {
                Err(TrainError::Diverged { step, g_loss, d_loss, .. }) => {
                    return Err(TrainError::Diverged { step, g_loss, d_loss, log: Box::new(log) });
                }
                other => other?,
            };
            let rec = StepRecord {
                step: log.steps.len() as u64,
                epoch,
                g_loss: l.g_loss,
                d_loss: l.d_loss,
                d_real_accuracy: l.d_real_accuracy,
                d_fake_accuracy: l.d_fake_accuracy,
            };
            log.steps.push(rec);
            if cfg.monitor_every > 0 && log.steps.len().is_multiple_of(cfg.monitor_every) && b + 1 < batches {
                let window = &log.steps[log.steps.len() - cfg.monitor_every..];
                let report = mode_collapse_monitor(window, &monitor_samples(&state.generator, cfg.seed)?, reference);
                log.monitors.push(MonitorRecord { step: rec.step, report });
            }
        }
        let window = &log.steps[first..];
        let report = mode_collapse_monitor(window, &monitor_samples(&state.generator, cfg.seed)?, reference);
        let step = log.steps.len() as u64 - 1;
        log.monitors.push(MonitorRecord { step, report });
        progress(&Progress {
            epoch: epoch + 1,
            epochs: cfg.epochs,
            step: step + 1,
            mean_g_loss: report.window_g_loss.unwrap_or(f64::NAN),
            mean_d_loss: report.window_d_loss.unwrap_or(f64::NAN),
            collapse: Some(report),
        });
    }
    Ok(TrainOutcome {
        architecture: arch.clone(),
        config: cfg.clone(),
        generator: state.generator,
        discriminator: state.discriminator,
        log,
    })
}
