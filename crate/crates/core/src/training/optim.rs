use std::collections::BTreeMap;

use dropnoise_tensor::{Gradients, Scalar, Tensor};
use serde::{Deserialize, Serialize};

/// Optimizer choice and hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OptimizerConfig {
    Adam { learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64 },
    Sgd { learning_rate: f64 },
}

impl OptimizerConfig {
    pub const DCGAN_ADAM: Self = Self::Adam { learning_rate: 2e-4, beta1: 0.5, beta2: 0.999, epsilon: 1e-8 };

    pub fn learning_rate(&self) -> f64 {
        match *self {
            Self::Adam { learning_rate, .. } | Self::Sgd { learning_rate } => learning_rate,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Moments<T> {
    m: Vec<T>,
    v: Vec<T>,
}

/// Optimizer state for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Optimizer<T> {
    config: OptimizerConfig,
    step: u64,
    moments: BTreeMap<String, Moments<T>>,
}

impl<T: Scalar> Optimizer<T> {
    pub fn new(config: OptimizerConfig) -> Self {
        Self { config, step: 0, moments: BTreeMap::new() }
    }

    pub fn config(&self) -> &OptimizerConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update to every parameter that has a gradient.
    pub fn update(&mut self, params: &mut BTreeMap<String, Tensor<T>>, grads: &Gradients<T>) {
        self.step += 1;
        match self.config {
            OptimizerConfig::Sgd { learning_rate } => {
                let lr = T::from_f64_lossy(learning_rate);
                for (name, p) in params.iter_mut() {
                    if let Some(g) = grads.get(name) {
                        for (w, &d) in p.data_mut().iter_mut().zip(g.data()) {
                            *w = *w - lr * d;
                        }
                    }
                }
            }
            OptimizerConfig::Adam { learning_rate, beta1, beta2, epsilon } => {
                let t = self.step as i32;
                let step_size = learning_rate * (1.0 - beta2.powi(t)).sqrt() / (1.0 - beta1.powi(t));
                let (b1, b2) = (T::from_f64_lossy(beta1), T::from_f64_lossy(beta2));
                let (c1, c2) = (T::one() - b1, T::one() - b2);
                let step_size = T::from_f64_lossy(step_size);
                let eps_hat = T::from_f64_lossy(epsilon * (1.0 - beta2.powi(t)).sqrt());
                for (name, p) in params.iter_mut() {
                    let Some(g) = grads.get(name) else { continue };
                    let mo = self
                        .moments
                        .entry(name.clone())
                        .or_insert_with(|| Moments { m: vec![T::zero(); p.len()], v: vec![T::zero(); p.len()] });
                    for (((w, &d), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(&mut mo.m).zip(&mut mo.v) {
                        *m = b1 * *m + c1 * d;
                        *v = b2 * *v + c2 * d * d;
                        *w = *w - step_size * *m / (v.sqrt() + eps_hat);
                    }
                }
            }
        }
    }
}
