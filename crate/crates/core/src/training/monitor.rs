use dropnoise_tensor::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use super::StepRecord;
use crate::variety::mean_pairwise_distance;

/// Fraction of the dataset's mean pairwise distance below which a sample
/// batch counts as collapsed.
pub const COLLAPSE_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollapseReport {
    pub flagged: bool,
    pub mean_pairwise_distance: f64,
    pub threshold: f64,
    pub samples: usize,
    /// Mean losses over the supplied log window; `None` for an empty window.
    pub window_g_loss: Option<f64>,
    pub window_d_loss: Option<f64>,
}

/// Flags a sample batch whose mean pairwise distance falls below
/// `COLLAPSE_FRACTION · reference_distance`. Advisory only.
pub fn mode_collapse_monitor<T: Scalar>(window: &[StepRecord], samples: &Tensor<T>, reference_distance: f64) -> CollapseReport {
    let mean = mean_pairwise_distance(samples);
    let threshold = COLLAPSE_FRACTION * reference_distance;
    let avg = |f: fn(&StepRecord) -> f64| {
        (!window.is_empty()).then(|| window.iter().map(f).sum::<f64>() / window.len() as f64)
    };
    CollapseReport {
        flagged: mean < threshold,
        mean_pairwise_distance: mean,
        threshold,
        samples: samples.shape()[0],
        window_g_loss: avg(|r| r.g_loss),
        window_d_loss: avg(|r| r.d_loss),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identical_images_are_flagged() {
        let batch = Tensor::from_fn(vec![64, 1, 4, 4], |i| (i % 16) as f32 / 8.0 - 1.0).unwrap();
        let r = mode_collapse_monitor(&[], &batch, 3.0);
        assert!(r.flagged);
        assert_eq!(r.mean_pairwise_distance, 0.0);
        assert_eq!(r.window_g_loss, None);
    }

    #[test]
    fn independent_noise_is_not_flagged() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let batch = Tensor::from_fn(vec![64, 1, 28, 28], |_| rng.random_range(-1.0f32..1.0)).unwrap();
        // Uniform noise on [−1, 1]: E‖a−b‖² = 784·2/3.
        let r = mode_collapse_monitor(&[], &batch, (784.0f64 * 2.0 / 3.0).sqrt());
        assert!(!r.flagged);
        assert!(r.mean_pairwise_distance > 0.9 * r.threshold / COLLAPSE_FRACTION);
    }

    #[test]
    fn threshold_boundary() {
        // Two points at distance d: mean pairwise distance is exactly d.
        let batch = Tensor::new(vec![2, 2], vec![0.0f64, 0.0, 3.0, 4.0]).unwrap();
        assert!(!mode_collapse_monitor::<f64>(&[], &batch, 50.0).flagged);
        assert!(mode_collapse_monitor::<f64>(&[], &batch, 50.0001).flagged);
        let window = [
            StepRecord { step: 0, epoch: 0, g_loss: 1.0, d_loss: 2.0, d_real_accuracy: 0.5, d_fake_accuracy: 0.5 },
            StepRecord { step: 1, epoch: 0, g_loss: 3.0, d_loss: 4.0, d_real_accuracy: 0.5, d_fake_accuracy: 0.5 },
        ];
        let r = mode_collapse_monitor::<f64>(&window, &batch, 1.0);
        assert_eq!((r.window_g_loss, r.window_d_loss), (Some(2.0), Some(3.0)));
    }
}
