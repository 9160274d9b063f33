use dropnoise_tensor::{Scalar, Tensor};

use super::VarietyError;

/// L2 norm of `a − b` over all elements.
pub fn euclidean_distance<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64, VarietyError> {
    if a.shape() != b.shape() {
        return Err(VarietyError::ShapeMismatch { left: a.shape().to_vec(), right: b.shape().to_vec() });
    }
    Ok(slice_distance(a.data(), b.data()))
}

/// Distance between two equal-length slices, accumulated in 64-bit.
pub fn slice_distance<T: Scalar>(a: &[T], b: &[T]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x.to_f64_lossy() - y.to_f64_lossy();
            d * d
        })
        .sum::<f64>()
        .sqrt()
}

/// Splits a `[N, ...]` tensor into its N items.
pub fn items<T: Scalar>(batch: &Tensor<T>) -> impl Iterator<Item = &[T]> {
    let n = batch.shape()[0];
    batch.data().chunks(batch.len() / n.max(1))
}

/// Mean distance over all unordered pairs of batch items; 0 for fewer than two.
pub fn mean_pairwise_distance<T: Scalar>(batch: &Tensor<T>) -> f64 {
    let rows: Vec<&[T]> = items(batch).collect();
    let mut total = 0.0;
    let mut pairs = 0u64;
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            total += slice_distance(rows[i], rows[j]);
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}
