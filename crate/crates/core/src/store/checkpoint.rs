use super::container::Container;
use crate::error::{Error, Result};
use crate::nn::{EmaState, Sgd, Slot, ToyDetector};
use crate::real::Real;
use crate::tensor::Tensor;

pub const CHECKPOINT_KIND: &str = "checkpoint";
pub const SECTION_PARAMS: &str = "params";
pub const SECTION_BUFFERS: &str = "buffers";
pub const SECTION_EMA: &str = "ema";
pub const SECTION_MOMENTUM: &str = "momentum";

/// Parameters and buffers in declaration order, then the EMA shadows and
/// optimizer velocities as parallel sections named after the parameters.
pub fn checkpoint_container<T: Real>(
    model: &mut ToyDetector<T>,
    ema: Option<&EmaState<T>>,
    sgd: Option<&Sgd<T>>,
) -> Container<T> {
    let mut c = Container::new(CHECKPOINT_KIND);
    let mut buffers = Vec::new();
    let mut param_names = Vec::new();
    model.visit(&mut |slot| match slot {
        Slot::Param(name, p) => {
            c.push(SECTION_PARAMS, name.clone(), p.value.clone());
            param_names.push(name);
        }
        Slot::Buffer(name, b) => buffers.push((name, b.clone())),
    });
    for (name, b) in buffers {
        c.push(SECTION_BUFFERS, name, b);
    }
    if let Some(ema) = ema {
        for (name, s) in param_names.iter().zip(&ema.shadow) {
            c.push(SECTION_EMA, name.clone(), s.clone());
        }
        c.meta["ema_decay"] = serde_json::json!(ema.decay);
    }
    if let Some(sgd) = sgd {
        for (name, v) in param_names.iter().zip(&sgd.velocity) {
            c.push(SECTION_MOMENTUM, name.clone(), v.clone());
        }
    }
    c
}

fn fetch<'a, T: Real>(c: &'a Container<T>, section: &str, name: &str, expected: &[usize]) -> Result<&'a Tensor<T>> {
    let t = c
        .get(section, name)
        .ok_or_else(|| Error::Format(format!("checkpoint lacks {section} tensor `{name}`")))?;
    if t.shape() != expected {
        return Err(Error::CheckpointShape {
            name: name.to_string(),
            expected: expected.to_vec(),
            found: t.shape().to_vec(),
        });
    }
    Ok(t)
}

/// Loads parameters (raw or EMA shadow) and buffers into `model`.
pub fn load_model_state<T: Real>(c: &Container<T>, model: &mut ToyDetector<T>, use_ema: bool) -> Result<()> {
    if c.kind != CHECKPOINT_KIND {
        return Err(Error::Format(format!("expected a checkpoint, found a `{}` container", c.kind)));
    }
    let section = if use_ema { SECTION_EMA } else { SECTION_PARAMS };
    if use_ema && c.section(SECTION_EMA).next().is_none() {
        return Err(Error::Format("checkpoint has no EMA shadow".into()));
    }
    let mut result = Ok(());
    model.visit(&mut |slot| {
        if result.is_err() {
            return;
        }
        result = match slot {
            Slot::Param(name, p) => fetch(c, section, &name, p.value.shape()).map(|t| p.value = t.clone()),
            Slot::Buffer(name, b) => fetch(c, SECTION_BUFFERS, &name, b.shape()).map(|t| *b = t.clone()),
        };
    });
    result
}

fn param_section<T: Real>(c: &Container<T>, model: &mut ToyDetector<T>, section: &str) -> Result<Vec<Tensor<T>>> {
    let mut out = Vec::new();
    let mut result = Ok(());
    model.visit(&mut |slot| {
        if let (Ok(()), Slot::Param(name, p)) = (&result, slot) {
            match fetch(c, section, &name, p.value.shape()) {
                Ok(t) => out.push(t.clone()),
                Err(e) => result = Err(e),
            }
        }
    });
    result.map(|_| out)
}

pub fn load_ema_state<T: Real>(c: &Container<T>, model: &mut ToyDetector<T>) -> Result<Option<EmaState<T>>> {
    if c.section(SECTION_EMA).next().is_none() {
        return Ok(None);
    }
    let decay = c
        .meta
        .get("ema_decay")
        .and_then(|v| v.as_f64())
        .ok_or_else(|| Error::Format("checkpoint EMA section without decay".into()))?;
    Ok(Some(EmaState::new(param_section(c, model, SECTION_EMA)?, decay)?))
}

pub fn load_momentum<T: Real>(c: &Container<T>, model: &mut ToyDetector<T>, sgd: &mut Sgd<T>) -> Result<()> {
    sgd.velocity = param_section(c, model, SECTION_MOMENTUM)?;
    Ok(())
}
