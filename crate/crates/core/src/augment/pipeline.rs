use rand::Rng;
use serde::{Deserialize, Serialize};

use super::geometric::{random_crop, random_expand, CropConfig, ExpandConfig};
use super::gridmask::{gridmask, GridMaskConfig};
use super::mix::{cutmix, mixup, sample_lambda, DEFAULT_BETA};
use super::TrainSample;
use crate::data::resize_bilinear;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixMode {
    None,
    Mixup,
    Cutmix,
    /// MixUp or CutMix with equal odds, never both on one sample.
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixConfig {
    pub mode: MixMode,
    pub prob: f64,
    /// λ ~ Beta(beta, beta).
    pub beta: f64,
}

impl Default for MixConfig {
    fn default() -> Self {
        MixConfig {
            mode: MixMode::Both,
            prob: 0.5,
            beta: DEFAULT_BETA,
        }
    }
}

/// Order: expand → crop → resize → (cutmix | mixup) → gridmask.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub expand: ExpandConfig,
    pub crop: CropConfig,
    pub mix: MixConfig,
    pub gridmask: GridMaskConfig,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            enabled: false,
            expand: ExpandConfig::default(),
            crop: CropConfig::default(),
            mix: MixConfig::default(),
            gridmask: GridMaskConfig::default(),
        }
    }
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must lie in [0, 1], got {p}")))
    }
}

impl AugmentConfig {
    pub fn validate(&self) -> Result<()> {
        check_prob("augment.expand.prob", self.expand.prob)?;
        check_prob("augment.crop.prob", self.crop.prob)?;
        check_prob("augment.crop.min_keep", self.crop.min_keep)?;
        check_prob("augment.mix.prob", self.mix.prob)?;
        check_prob("augment.gridmask.apply_prob", self.gridmask.apply_prob)?;
        if !(self.expand.max_ratio >= 1.0) {
            return Err(Error::Config("augment.expand.max_ratio must be at least 1".into()));
        }
        if !(self.crop.min_scale > 0.0 && self.crop.min_scale <= 1.0) {
            return Err(Error::Config("augment.crop.min_scale must lie in (0, 1]".into()));
        }
        if !(self.mix.beta > 0.0) {
            return Err(Error::Config("augment.mix.beta must be positive".into()));
        }
        if !(self.gridmask.ratio > 0.0 && self.gridmask.ratio < 1.0) || self.gridmask.unit_min < 2 {
            return Err(Error::Config("augment.gridmask needs 0 < ratio < 1 and unit_min ≥ 2".into()));
        }
        if self.gridmask.unit_min > self.gridmask.unit_max {
            return Err(Error::Config("augment.gridmask.unit_min exceeds unit_max".into()));
        }
        Ok(())
    }
}

/// Augments `dataset[index]` and resizes it to `out_h × out_w`. Mixing
/// partners are drawn from the rest of `dataset` and only resized.
pub fn augment_sample<R: Rng + ?Sized>(
    dataset: &[TrainSample],
    index: usize,
    cfg: &AugmentConfig,
    out_h: usize,
    out_w: usize,
    rng: &mut R,
) -> Result<TrainSample> {
    let base = dataset
        .get(index)
        .ok_or_else(|| Error::InvalidArgument(format!("sample index {index} out of range")))?;
    if !cfg.enabled {
        return resize_bilinear(base, out_h, out_w);
    }
    let mut s = base.clone();
    if cfg.expand.enabled && rng.random::<f64>() < cfg.expand.prob {
        s = random_expand(&s, cfg.expand.max_ratio, cfg.expand.fill, rng)?;
    }
    if cfg.crop.enabled && rng.random::<f64>() < cfg.crop.prob {
        s = random_crop(&s, cfg.crop.min_keep, cfg.crop.min_scale, rng)?;
    }
    s = resize_bilinear(&s, out_h, out_w)?;
    if cfg.mix.mode != MixMode::None && dataset.len() > 1 && rng.random::<f64>() < cfg.mix.prob {
        let mut j = rng.random_range(0..dataset.len() - 1);
        if j >= index {
            j += 1;
        }
        let partner = resize_bilinear(&dataset[j], out_h, out_w)?;
        let lam = sample_lambda(cfg.mix.beta, rng)?;
        let use_cutmix = match cfg.mix.mode {
            MixMode::Cutmix => true,
            MixMode::Mixup => false,
            _ => rng.random::<bool>(),
        };
        s = if use_cutmix {
            cutmix(&s, &partner, lam, rng)?
        } else {
            mixup(&s, &partner, lam)?
        };
    }
    if cfg.gridmask.enabled {
        let p = cfg.gridmask.sample(out_h, out_w, rng);
        s = gridmask(&s, &p, rng)?;
    }
    Ok(s)
}
