use crate::error::Result;
use crate::real::Real;
use crate::tensor::Tensor;

/// Clamp applied to probabilities before any logarithm.
pub const PROB_EPS: f64 = 1e-6;

/// Penalty-reduced focal loss over heatmaps of any (matching) shape.
///
/// Cells whose target is exactly 1 contribute `-(1-p)^2 log p`; all others
/// contribute `-(1-t)^4 p^2 log(1-p)`. The sum is divided by the number of
/// positive cells, floored at 1. Returns the loss and `dL/dpred`.
pub fn focal_loss<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<(T, Tensor<T>)> {
    target.ensure_shape("focal_loss", pred.shape())?;
    let one = T::one();
    let two = T::lit(2.0);
    let mut grad = Tensor::zeros(pred.shape());
    let mut total = T::zero();
    let mut positives = 0usize;
    for ((g, &p), &t) in grad.data_mut().iter_mut().zip(pred.data()).zip(target.data()) {
        if t == one {
            positives += 1;
            let q = one - p;
            total += -(q * q) * p.ln();
            *g = two * q * p.ln() - q * q / p;
        } else {
            let neg = (one - t).powi(4);
            let l1p = (one - p).ln();
            total += -neg * p * p * l1p;
            *g = -neg * (two * p * l1p - p * p / (one - p));
        }
    }
    let norm = T::lit(positives.max(1) as f64);
    for g in grad.data_mut() {
        *g /= norm;
    }
    Ok((total / norm, grad))
}
