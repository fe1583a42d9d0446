use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TrainSample;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMaskParams {
    /// Grid period in pixels.
    pub unit: usize,
    /// Fraction of each period left visible.
    pub ratio: f64,
    pub offset_x: usize,
    pub offset_y: usize,
    pub apply_prob: f64,
}

impl GridMaskParams {
    pub fn validate(&self, height: usize, width: usize) -> Result<()> {
        let ok = self.unit >= 2
            && self.unit <= height.min(width)
            && self.ratio > 0.0
            && self.ratio < 1.0
            && self.offset_x < self.unit
            && self.offset_y < self.unit
            && (0.0..=1.0).contains(&self.apply_prob);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid grid mask parameters {self:?} for {width}x{height}")))
        }
    }

    /// `true` where the pixel is dropped.
    pub fn masked(&self, x: usize, y: usize) -> bool {
        let hole = self.unit as f64 * (1.0 - self.ratio);
        let inside = |v: usize, off: usize| (((v + off) % self.unit) as f64) < hole;
        inside(x, self.offset_x) && inside(y, self.offset_y)
    }
}

/// Zeroes a grid of square holes with probability `apply_prob`; boxes are
/// untouched.
pub fn gridmask<R: Rng + ?Sized>(s: &TrainSample, p: &GridMaskParams, rng: &mut R) -> Result<TrainSample> {
    let (h, w) = (s.height(), s.width());
    p.validate(h, w)?;
    if !(rng.random::<f64>() < p.apply_prob) {
        return Ok(s.clone());
    }
    Ok(apply_gridmask(s, p))
}

/// Deterministic core of [`gridmask`].
pub fn apply_gridmask(s: &TrainSample, p: &GridMaskParams) -> TrainSample {
    let (h, w) = (s.height(), s.width());
    let mut out = s.clone();
    for plane in out.image.data_mut().chunks_mut(h * w) {
        for y in 0..h {
            for x in 0..w {
                if p.masked(x, y) {
                    plane[y * w + x] = 0.0;
                }
            }
        }
    }
    out
}

/// Pipeline-level settings: the period is drawn uniformly from
/// `[unit_min, unit_max]` and offsets uniformly from `[0, unit)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridMaskConfig {
    pub enabled: bool,
    pub unit_min: usize,
    pub unit_max: usize,
    pub ratio: f64,
    pub apply_prob: f64,
}

impl Default for GridMaskConfig {
    fn default() -> Self {
        GridMaskConfig {
            enabled: true,
            unit_min: 16,
            unit_max: 48,
            ratio: 0.5,
            apply_prob: 0.7,
        }
    }
}

impl GridMaskConfig {
    pub fn sample<R: Rng + ?Sized>(&self, height: usize, width: usize, rng: &mut R) -> GridMaskParams {
        let hi = self.unit_max.min(height.min(width)).max(2);
        let lo = self.unit_min.clamp(2, hi);
        let unit = rng.random_range(lo..=hi);
        GridMaskParams {
            unit,
            ratio: self.ratio,
            offset_x: rng.random_range(0..unit),
            offset_y: rng.random_range(0..unit),
            apply_prob: self.apply_prob,
        }
    }
}
