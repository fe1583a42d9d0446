use super::{Layer, Slot};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

pub const DEFAULT_EMA_DECAY: f64 = 0.9998;

/// Exponentially averaged copies of a model's parameters (buffers excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct EmaState<T> {
    pub decay: f64,
    pub shadow: Vec<Tensor<T>>,
}

/// `shadow ← decay·shadow + (1 − decay)·param`, elementwise.
pub fn ema_update<T: Real>(state: &mut EmaState<T>, params: &[&Tensor<T>]) -> Result<()> {
    if params.len() != state.shadow.len() {
        return Err(Error::InvalidArgument(format!(
            "ema holds {} tensors, got {}",
            state.shadow.len(),
            params.len()
        )));
    }
    let d = T::lit(state.decay);
    let rest = T::one() - d;
    for (s, p) in state.shadow.iter_mut().zip(params) {
        p.ensure_shape("ema_update", s.shape())?;
        for (a, &b) in s.data_mut().iter_mut().zip(p.data()) {
            *a = d * *a + rest * b;
        }
    }
    Ok(())
}

impl<T: Real> EmaState<T> {
    pub fn new(shadow: Vec<Tensor<T>>, decay: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&decay) {
            return Err(Error::Config(format!("ema decay must lie in [0, 1], got {decay}")));
        }
        Ok(EmaState { decay, shadow })
    }

    /// Shadow initialized to the model's current parameters.
    pub fn from_model<L: Layer<T>>(model: &mut L, decay: f64) -> Result<Self> {
        EmaState::new(param_values(model), decay)
    }

    pub fn update_from<L: Layer<T>>(&mut self, model: &mut L) -> Result<()> {
        let values = param_values(model);
        let refs: Vec<&Tensor<T>> = values.iter().collect();
        ema_update(self, &refs)
    }

    /// Copies the shadow into `model`'s parameters. Buffers are left alone.
    pub fn write_into<L: Layer<T>>(&self, model: &mut L) -> Result<()> {
        let mut params = Vec::new();
        model.visit("", &mut |slot| {
            if let Slot::Param(_, p) = slot {
                params.push(p);
            }
        });
        if params.len() != self.shadow.len() {
            return Err(Error::InvalidArgument("ema shadow does not match the model".into()));
        }
        for (p, s) in params.into_iter().zip(&self.shadow) {
            s.ensure_shape("ema write", p.value.shape())?;
            p.value = s.clone();
        }
        Ok(())
    }
}

fn param_values<T: Real, L: Layer<T>>(model: &mut L) -> Vec<Tensor<T>> {
    let mut out = Vec::new();
    model.visit("", &mut |slot| {
        if let Slot::Param(_, p) = slot {
            out.push(p.value.clone());
        }
    });
    out
}
