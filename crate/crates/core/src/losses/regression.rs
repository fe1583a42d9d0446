use super::ags::{reweight_giou, AgsConfig};
use crate::codec::{box_from_sides, EncodedTargets};
use crate::error::{Error, Result};
use crate::geometry::{giou, giou_grad};
use crate::real::Real;
use crate::tensor::Tensor;

/// Unnormalized regression terms for one image.
#[derive(Debug, Clone)]
pub struct RegressionTerms<T> {
    /// `sum(w * giou_loss)` over owned cells.
    pub weighted_sum: T,
    /// `sum(w)` over owned cells.
    pub weight_sum: T,
    /// Gradient of `weighted_sum` with respect to the side distances.
    pub grad: Tensor<T>,
}

/// Computes per-image sums before normalization. `ags` holds one map per
/// object and is required when `cfg.enabled`.
pub fn regression_terms<T: Real>(
    pred_reg: &Tensor<T>,
    targets: &EncodedTargets<T>,
    ags: Option<&[Tensor<T>]>,
    cfg: &AgsConfig,
) -> Result<RegressionTerms<T>> {
    let (h, w) = (targets.feature_height(), targets.feature_width());
    pred_reg.ensure_shape("regression_loss", &[4, h, w])?;
    let ags = if cfg.enabled {
        let maps = ags.ok_or_else(|| Error::InvalidArgument("AGS enabled but no AGS maps supplied".into()))?;
        if maps.len() != targets.objects.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} AGS maps, got {}",
                targets.objects.len(),
                maps.len()
            )));
        }
        for m in maps {
            m.ensure_shape("regression_loss", &[h, w])?;
        }
        Some(maps)
    } else {
        None
    };
    let lambda = T::lit(cfg.lambda);
    let cells = h * w;
    let reg = pred_reg.data();
    let weights = targets.weight_map.data();
    let mut grad = Tensor::zeros(pred_reg.shape());
    let mut weighted_sum = T::zero();
    let mut weight_sum = T::zero();
    {
        let g_out = grad.data_mut();
        for (cell, &id) in targets.object_id.iter().enumerate() {
            if id < 0 {
                continue;
            }
            let omega = weights[cell];
            let (row, col) = (cell / w, cell % w);
            let sides = [0, 1, 2, 3].map(|k| reg[k * cells + cell]);
            let pred = box_from_sides(row, col, sides);
            let gt = targets.objects[id as usize].bbox;
            let g = giou(&pred, &gt);
            let (term, scale) = match ags {
                Some(maps) => {
                    let s = maps[id as usize].data()[cell];
                    (reweight_giou(g, s, lambda), (T::one() - lambda) + lambda * s)
                }
                None => (T::one() - g, T::one()),
            };
            weighted_sum += omega * term;
            weight_sum += omega;
            let dg = giou_grad(&pred, &gt)?;
            // d(term)/d(g) = -scale; the box edges move as (-l, -t, +r, +b).
            let coef = omega * scale;
            g_out[cell] = coef * dg[0];
            g_out[cells + cell] = coef * dg[1];
            g_out[2 * cells + cell] = -coef * dg[2];
            g_out[3 * cells + cell] = -coef * dg[3];
        }
    }
    Ok(RegressionTerms {
        weighted_sum,
        weight_sum,
        grad,
    })
}

/// Sample-weighted GIoU loss for one image: `sum(w * giou_loss) / max(sum(w), 1)`,
/// with `giou_loss = 1 - g`, or the AGS-reweighted form when enabled.
/// Returns the loss and its gradient with respect to `pred_reg` (`4 × h × w`).
pub fn regression_loss<T: Real>(
    pred_reg: &Tensor<T>,
    targets: &EncodedTargets<T>,
    ags: Option<&[Tensor<T>]>,
    cfg: &AgsConfig,
) -> Result<(T, Tensor<T>)> {
    let terms = regression_terms(pred_reg, targets, ags, cfg)?;
    let norm = terms.weight_sum.max(T::one());
    let mut grad = terms.grad;
    for g in grad.data_mut() {
        *g /= norm;
    }
    Ok((terms.weighted_sum / norm, grad))
}

/// Batch form over `N × 4 × h × w` predictions; the normalizer is the
/// total weight of the batch.
pub fn regression_loss_batch<T: Real>(
    pred_reg: &Tensor<T>,
    targets: &[EncodedTargets<T>],
    ags: Option<&[Vec<Tensor<T>>]>,
    cfg: &AgsConfig,
) -> Result<(T, Tensor<T>)> {
    if pred_reg.shape().first() != Some(&targets.len()) {
        return Err(Error::ShapeMismatch {
            op: "regression_loss_batch",
            expected: vec![targets.len()],
            actual: pred_reg.shape().to_vec(),
        });
    }
    let mut grad = Vec::with_capacity(pred_reg.len());
    let mut weighted_sum = T::zero();
    let mut weight_sum = T::zero();
    for (n, t) in targets.iter().enumerate() {
        let maps = ags.map(|a| a[n].as_slice());
        let terms = regression_terms(&pred_reg.batch_item(n)?, t, maps, cfg)?;
        weighted_sum += terms.weighted_sum;
        weight_sum += terms.weight_sum;
        grad.extend_from_slice(terms.grad.data());
    }
    let norm = weight_sum.max(T::one());
    for g in grad.iter_mut() {
        *g /= norm;
    }
    Ok((weighted_sum / norm, Tensor::from_vec(pred_reg.shape(), grad)?))
}
