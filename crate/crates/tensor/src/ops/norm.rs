//! Per-channel batch normalization over `[N, C]` or `[N, C, H, W]` inputs.

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_MOMENTUM: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormConfig {
    pub epsilon: f64,
    pub momentum: f64,
}

impl Default for NormConfig {
    fn default() -> Self {
        Self { epsilon: DEFAULT_EPSILON, momentum: DEFAULT_MOMENTUM }
    }
}

/// Per-channel statistics of one train-phase pass.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats<T> {
    pub mean: Vec<T>,
    /// Biased (population) variance used for normalization.
    pub var: Vec<T>,
    /// Elements per channel.
    pub count: usize,
}

impl<T: Scalar> BatchStats<T> {
    /// Exponential running-average update; running variance tracks the
    /// unbiased estimate when more than one element per channel is seen.
    pub fn update_running(&self, running_mean: &mut [T], running_var: &mut [T], momentum: f64) {
        let m = T::from_f64_lossy(momentum);
        let keep = T::one() - m;
        let correction = if self.count > 1 {
            T::from_f64_lossy(self.count as f64 / (self.count - 1) as f64)
        } else {
            T::one()
        };
        for c in 0..self.mean.len() {
            running_mean[c] = keep * running_mean[c] + m * self.mean[c];
            running_var[c] = keep * running_var[c] + m * self.var[c] * correction;
        }
    }
}

/// (batch, channels, spatial) decomposition of a normalizable input.
pub(crate) fn layout<T: Scalar>(x: &Tensor<T>, channels: usize) -> Result<(usize, usize)> {
    let s = x.shape();
    if s.len() != 2 && s.len() != 4 {
        return Err(TensorError::Rank { op: "batchnorm", expected: 4, shape: s.to_vec() });
    }
    if s[1] != channels {
        return Err(TensorError::ShapeMismatch { op: "batchnorm", left: s.to_vec(), right: vec![channels] });
    }
    Ok((s[0], s[2..].iter().product()))
}

/// Flat indices of channel `ch` in an `[n, c, l]` layout.
fn channel_indices(n: usize, c: usize, l: usize, ch: usize) -> impl Iterator<Item = usize> {
    (0..n).flat_map(move |b| {
        let base = (b * c + ch) * l;
        base..base + l
    })
}

fn check_params<T: Scalar>(gamma: &Tensor<T>, beta: &Tensor<T>, channels: usize) -> Result<()> {
    for p in [gamma, beta] {
        if p.shape() != [channels] {
            return Err(TensorError::ShapeMismatch { op: "batchnorm", left: p.shape().to_vec(), right: vec![channels] });
        }
    }
    Ok(())
}

/// Train phase: normalizes with batch statistics. Returns the output, the
/// normalized input `x̂` and the statistics.
pub fn batchnorm_train<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    epsilon: f64,
) -> Result<(Tensor<T>, Tensor<T>, BatchStats<T>)> {
    let c = gamma.len();
    check_params(gamma, beta, c)?;
    let (n, l) = layout(x, c)?;
    let count = n * l;
    let inv_count = T::from_f64_lossy(1.0 / count as f64);
    let eps = T::from_f64_lossy(epsilon);
    let data = x.data();
    let mut xhat = vec![T::zero(); data.len()];
    let mut out = vec![T::zero(); data.len()];
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mu = channel_indices(n, c, l, ch).map(|i| data[i]).sum::<T>() * inv_count;
        let v = channel_indices(n, c, l, ch).map(|i| (data[i] - mu) * (data[i] - mu)).sum::<T>() * inv_count;
        let inv_std = T::one() / (v + eps).sqrt();
        let (g, b) = (gamma.data()[ch], beta.data()[ch]);
        for i in channel_indices(n, c, l, ch) {
            let h = (data[i] - mu) * inv_std;
            xhat[i] = h;
            out[i] = g * h + b;
        }
        mean[ch] = mu;
        var[ch] = v;
    }
    let shape = x.shape().to_vec();
    Ok((Tensor::new(shape.clone(), out)?, Tensor::new(shape, xhat)?, BatchStats { mean, var, count }))
}

/// Gradients of [`batchnorm_train`] w.r.t. input, gamma and beta.
pub fn batchnorm_train_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    xhat: &Tensor<T>,
    gamma: &Tensor<T>,
    var: &[T],
    epsilon: f64,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let c = gamma.len();
    let (n, l) = layout(xhat, c)?;
    let m = T::from_f64_lossy((n * l) as f64);
    let eps = T::from_f64_lossy(epsilon);
    let dy = grad_out.data();
    let h = xhat.data();
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let sum_dy = channel_indices(n, c, l, ch).map(|i| dy[i]).sum::<T>();
        let sum_dy_h = channel_indices(n, c, l, ch).map(|i| dy[i] * h[i]).sum::<T>();
        dgamma[ch] = sum_dy_h;
        dbeta[ch] = sum_dy;
        let g = gamma.data()[ch];
        let scale = g / ((var[ch] + eps).sqrt() * m);
        for i in channel_indices(n, c, l, ch) {
            dx[i] = scale * (m * dy[i] - sum_dy - h[i] * sum_dy_h);
        }
    }
    Ok((
        Tensor::new(grad_out.shape().to_vec(), dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

/// Generation phase: normalizes with stored running statistics.
pub fn batchnorm_eval<T: Scalar>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &[T],
    running_var: &[T],
    epsilon: f64,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let c = gamma.len();
    check_params(gamma, beta, c)?;
    if running_mean.len() != c || running_var.len() != c {
        return Err(TensorError::ShapeMismatch { op: "batchnorm", left: vec![running_mean.len()], right: vec![c] });
    }
    let (n, l) = layout(x, c)?;
    let eps = T::from_f64_lossy(epsilon);
    let data = x.data();
    let mut xhat = vec![T::zero(); data.len()];
    let mut out = vec![T::zero(); data.len()];
    for ch in 0..c {
        let inv_std = T::one() / (running_var[ch] + eps).sqrt();
        let (g, b, mu) = (gamma.data()[ch], beta.data()[ch], running_mean[ch]);
        for i in channel_indices(n, c, l, ch) {
            let h = (data[i] - mu) * inv_std;
            xhat[i] = h;
            out[i] = g * h + b;
        }
    }
    let shape = x.shape().to_vec();
    Ok((Tensor::new(shape.clone(), out)?, Tensor::new(shape, xhat)?))
}

pub fn batchnorm_eval_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    xhat: &Tensor<T>,
    gamma: &Tensor<T>,
    running_var: &[T],
    epsilon: f64,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let c = gamma.len();
    let (n, l) = layout(xhat, c)?;
    let eps = T::from_f64_lossy(epsilon);
    let dy = grad_out.data();
    let h = xhat.data();
    let mut dx = vec![T::zero(); dy.len()];
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for ch in 0..c {
        let scale = gamma.data()[ch] / (running_var[ch] + eps).sqrt();
        for i in channel_indices(n, c, l, ch) {
            dx[i] = dy[i] * scale;
            dgamma[ch] = dgamma[ch] + dy[i] * h[i];
            dbeta[ch] = dbeta[ch] + dy[i];
        }
    }
    Ok((
        Tensor::new(grad_out.shape().to_vec(), dx)?,
        Tensor::new(vec![c], dgamma)?,
        Tensor::new(vec![c], dbeta)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ones(c: usize) -> Tensor<f64> {
        Tensor::ones(vec![c]).unwrap()
    }

    fn zeros(c: usize) -> Tensor<f64> {
        Tensor::zeros(vec![c]).unwrap()
    }

    #[test]
    fn standardized_input_passes_through() {
        let x = Tensor::new(vec![4, 1], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let (y, _, stats) = batchnorm_train(&x, &ones(1), &zeros(1), DEFAULT_EPSILON).unwrap();
        assert_eq!(stats.mean, vec![0.0]);
        assert_eq!(stats.var, vec![1.0]);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let x = Tensor::full(vec![3, 2, 2, 2], 4.25).unwrap();
        let (y, _, _) = batchnorm_train(&x, &ones(2), &zeros(2), DEFAULT_EPSILON).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
        // A single-element batch has zero variance as well.
        let x = Tensor::new(vec![1, 1], vec![7.0]).unwrap();
        let (y, _, _) = batchnorm_train(&x, &ones(1), &zeros(1), DEFAULT_EPSILON).unwrap();
        assert!(y.all_finite());
        assert_eq!(y.data(), &[0.0]);
    }

    #[test]
    fn eval_uses_running_stats_from_train_pass() {
        // 2×2 batch: channel 0 = [1, 3], channel 1 = [2, 6].
        let x = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 6.0]).unwrap();
        let (_, _, stats) = batchnorm_train(&x, &ones(2), &zeros(2), DEFAULT_EPSILON).unwrap();
        let mut rm = vec![0.0, 0.0];
        let mut rv = vec![1.0, 1.0];
        stats.update_running(&mut rm, &mut rv, 0.1);
        // mean [2, 4]; unbiased var [2, 8].
        assert!((rm[0] - 0.2).abs() < 1e-15 && (rm[1] - 0.4).abs() < 1e-15);
        assert!((rv[0] - (0.9 + 0.2)).abs() < 1e-15 && (rv[1] - (0.9 + 0.8)).abs() < 1e-15);

        let gamma = Tensor::new(vec![2], vec![2.0, 0.5]).unwrap();
        let beta = Tensor::new(vec![2], vec![0.1, -0.1]).unwrap();
        let probe = Tensor::new(vec![1, 2], vec![1.0, 1.0]).unwrap();
        let (y, _) = batchnorm_eval(&probe, &gamma, &beta, &rm, &rv, DEFAULT_EPSILON).unwrap();
        let e0 = 2.0 * (1.0 - 0.2) / (1.1f64 + 1e-5).sqrt() + 0.1;
        let e1 = 0.5 * (1.0 - 0.4) / (1.7f64 + 1e-5).sqrt() - 0.1;
        assert!((y.data()[0] - e0).abs() < 1e-12);
        assert!((y.data()[1] - e1).abs() < 1e-12);
    }

    #[test]
    fn channel_count_must_match() {
        let x = Tensor::<f64>::zeros(vec![2, 3, 2, 2]).unwrap();
        assert!(batchnorm_train(&x, &ones(2), &zeros(2), DEFAULT_EPSILON).is_err());
    }
}
