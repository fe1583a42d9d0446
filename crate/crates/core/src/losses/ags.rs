use serde::{Deserialize, Serialize};

use crate::codec::{gaussian_kernel, EncodedTargets};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Attention-guided sampling settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AgsConfig {
    /// Interpolation between plain GIoU (`0`) and fully attention-weighted GIoU (`1`).
    pub lambda: f64,
    pub enabled: bool,
}

impl Default for AgsConfig {
    fn default() -> Self {
        AgsConfig {
            lambda: 0.5,
            enabled: true,
        }
    }
}

impl AgsConfig {
    pub fn validate(&self) -> Result<()> {
        if (0.0..=1.0).contains(&self.lambda) {
            Ok(())
        } else {
            Err(Error::Config(format!("ags.lambda must lie in [0, 1], got {}", self.lambda)))
        }
    }
}

/// Channel max followed by a softmax over all `h × w` cells.
pub fn ags_softmax<T: Real>(loc_logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = match *loc_logits.shape() {
        [c, h, w] if c > 0 => (c, h, w),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "ags_softmax",
                expected: vec![0, 0, 0],
                actual: loc_logits.shape().to_vec(),
            })
        }
    };
    let cells = h * w;
    let src = loc_logits.data();
    let mut m: Vec<T> = src[..cells].to_vec();
    for ch in 1..c {
        for (v, &x) in m.iter_mut().zip(&src[ch * cells..(ch + 1) * cells]) {
            *v = v.max(x);
        }
    }
    let peak = m.iter().copied().fold(T::neg_infinity(), T::max);
    for v in m.iter_mut() {
        *v = (*v - peak).exp();
    }
    let z: T = m.iter().copied().sum();
    for v in m.iter_mut() {
        *v /= z;
    }
    Tensor::from_vec(&[h, w], m)
}

/// Softmax response masked to the support of one object's kernel.
/// No renormalization after masking.
pub fn ags_map<T: Real>(loc_logits: &Tensor<T>, object_kernel: &Tensor<T>) -> Result<Tensor<T>> {
    let soft = ags_softmax(loc_logits)?;
    mask_to_support(soft, object_kernel)
}

fn mask_to_support<T: Real>(mut soft: Tensor<T>, kernel: &Tensor<T>) -> Result<Tensor<T>> {
    kernel.ensure_shape("ags_map", soft.shape())?;
    if !kernel.data().iter().any(|&k| k > T::zero()) {
        return Err(Error::EmptySupport);
    }
    for (s, &k) in soft.data_mut().iter_mut().zip(kernel.data()) {
        if !(k > T::zero()) {
            *s = T::zero();
        }
    }
    Ok(soft)
}

/// One AGS map per encoded object, in object order.
pub fn ags_maps_for_targets<T: Real>(loc_logits: &Tensor<T>, targets: &EncodedTargets<T>) -> Result<Vec<Tensor<T>>> {
    let soft = ags_softmax(loc_logits)?;
    let (h, w) = (targets.feature_height(), targets.feature_width());
    targets
        .kernels
        .iter()
        .map(|spec| {
            let kernel = gaussian_kernel::<T>(spec, h, w)?;
            mask_to_support(soft.clone(), &kernel)
        })
        .collect()
}

/// `1 - ((1 - lambda) + lambda * s) * g`.
pub fn reweight_giou<T: Real>(g: T, s: T, lambda: T) -> T {
    T::one() - ((T::one() - lambda) + lambda * s) * g
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_logits_give_uniform_map() {
        let logits = Tensor::<f64>::full(&[1, 4, 5], 0.7);
        let kernel = Tensor::full(&[4, 5], 1.0);
        let m = ags_map(&logits, &kernel).unwrap();
        for &v in m.data() {
            assert!((v - 1.0 / 20.0).abs() < 1e-15);
        }
        assert!((m.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn channel_permutation_is_irrelevant() {
        let logits = Tensor::<f64>::from_fn(&[3, 4, 4], |i| ((i * 37) % 11) as f64 * 0.3 - 1.0);
        let mut permuted = Tensor::zeros(&[3, 4, 4]);
        for (dst, src) in [(0usize, 2usize), (1, 0), (2, 1)] {
            permuted.data_mut()[dst * 16..(dst + 1) * 16].copy_from_slice(&logits.data()[src * 16..(src + 1) * 16]);
        }
        let kernel = Tensor::full(&[4, 4], 1.0);
        assert_eq!(ags_map(&logits, &kernel).unwrap(), ags_map(&permuted, &kernel).unwrap());
    }

    #[test]
    fn spike_inside_mask() {
        let mut logits = Tensor::<f64>::zeros(&[2, 5, 5]);
        logits.set(&[1, 2, 3], 6.0);
        let mut kernel = Tensor::zeros(&[5, 5]);
        for y in 1..4 {
            for x in 1..5 {
                kernel.set(&[y, x], 0.5);
            }
        }
        let m = ags_map(&logits, &kernel).unwrap();
        // direct softmax: 24 cells at exp(0), one at exp(6)
        let z = 24.0 + 6f64.exp();
        assert!((m.at(&[2, 3]) - 6f64.exp() / z).abs() < 1e-15);
        assert!((m.at(&[1, 1]) - 1.0 / z).abs() < 1e-15);
        assert_eq!(m.at(&[0, 0]), 0.0);
        let argmax = m
            .data()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(argmax, 2 * 5 + 3);
    }

    #[test]
    fn empty_support_is_an_error() {
        let logits = Tensor::<f64>::zeros(&[1, 3, 3]);
        let kernel = Tensor::zeros(&[3, 3]);
        assert!(matches!(ags_map(&logits, &kernel), Err(Error::EmptySupport)));
    }

    #[test]
    fn reweight_examples() {
        for s in [0.0, 0.3, 1.0] {
            assert_eq!(reweight_giou(0.8, s, 0.0), 1.0 - 0.8);
        }
        assert_eq!(reweight_giou(0.8, 0.0, 1.0), 1.0);
        assert!((reweight_giou(0.8f64, 0.2, 0.5) - 0.52).abs() < 1e-15);
    }
}
