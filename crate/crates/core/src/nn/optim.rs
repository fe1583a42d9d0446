use serde::{Deserialize, Serialize};

use super::{Layer, Slot};
use crate::error::Result;
use crate::real::Real;
use crate::tensor::Tensor;

/// One SGD step on a single tensor:
/// `v ← momentum·v + grad + weight_decay·param; param ← param − lr·v`.
pub fn sgd_step<T: Real>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    velocity: &mut Tensor<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    grad.ensure_shape("sgd_step", param.shape())?;
    velocity.ensure_shape("sgd_step", param.shape())?;
    let (lr, m, wd) = (T::lit(lr), T::lit(momentum), T::lit(weight_decay));
    for ((p, &g), v) in param.data_mut().iter_mut().zip(grad.data()).zip(velocity.data_mut()) {
        *v = m * *v + g + wd * *p;
        *p -= lr * *v;
    }
    Ok(())
}

/// Step decay: `base_lr · gamma^(milestones passed)`, with an optional linear
/// warmup from `warmup_factor · base_lr` over the first `warmup_iters`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub milestones: Vec<u64>,
    pub gamma: f64,
    pub warmup_iters: u64,
    pub warmup_factor: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule {
            base_lr: 0.015,
            milestones: vec![11_250, 13_750],
            gamma: 0.1,
            warmup_iters: 0,
            warmup_factor: 0.1,
        }
    }
}

impl LrSchedule {
    pub fn at(&self, iter: u64) -> f64 {
        let lr = lr_schedule(iter, self.base_lr, &self.milestones, self.gamma);
        if iter < self.warmup_iters {
            let t = iter as f64 / self.warmup_iters as f64;
            lr * (self.warmup_factor + (1.0 - self.warmup_factor) * t)
        } else {
            lr
        }
    }
}

pub fn lr_schedule(iter: u64, base_lr: f64, milestones: &[u64], gamma: f64) -> f64 {
    let passed = milestones.iter().filter(|&&m| iter >= m).count();
    base_lr * gamma.powi(passed as i32)
}

/// SGD with momentum and weight decay over all parameters of a layer, in
/// visit order.
#[derive(Debug, Clone)]
pub struct Sgd<T> {
    pub momentum: f64,
    pub weight_decay: f64,
    pub velocity: Vec<Tensor<T>>,
}

impl<T: Real> Sgd<T> {
    pub fn new<L: Layer<T>>(model: &mut L, momentum: f64, weight_decay: f64) -> Self {
        let mut velocity = Vec::new();
        model.visit("", &mut |slot| {
            if let Slot::Param(_, p) = slot {
                velocity.push(Tensor::zeros(p.value.shape()));
            }
        });
        Sgd {
            momentum,
            weight_decay,
            velocity,
        }
    }

    pub fn step<L: Layer<T>>(&mut self, model: &mut L, lr: f64) -> Result<()> {
        let mut params = Vec::new();
        model.visit("", &mut |slot| {
            if let Slot::Param(_, p) = slot {
                params.push(p);
            }
        });
        if params.len() != self.velocity.len() {
            return Err(crate::error::Error::InvalidArgument(format!(
                "optimizer tracks {} tensors, model has {}",
                self.velocity.len(),
                params.len()
            )));
        }
        for (p, v) in params.into_iter().zip(self.velocity.iter_mut()) {
            sgd_step(&mut p.value, &p.grad, v, lr, self.momentum, self.weight_decay)?;
        }
        Ok(())
    }
}
