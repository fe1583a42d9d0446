use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mix::Rect;
use super::TrainSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Crop windows tried before giving up.
pub const CROP_ATTEMPTS: usize = 50;

/// Places the image at `(offset_x, offset_y)` on a `canvas_h × canvas_w`
/// canvas filled with `fill`; boxes are translated by the offset.
pub fn expand_with(
    s: &TrainSample,
    canvas_h: usize,
    canvas_w: usize,
    offset_x: usize,
    offset_y: usize,
    fill: [f32; 3],
) -> Result<TrainSample> {
    let (h, w) = (s.height(), s.width());
    if offset_x + w > canvas_w || offset_y + h > canvas_h {
        return Err(Error::InvalidArgument(format!(
            "{w}x{h} image at ({offset_x}, {offset_y}) does not fit a {canvas_w}x{canvas_h} canvas"
        )));
    }
    if fill.iter().any(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::InvalidArgument(format!("fill color {fill:?} outside [0, 1]")));
    }
    let mut image = Tensor::zeros(&[3, canvas_h, canvas_w]);
    {
        let dst = image.data_mut();
        let src = s.image.data();
        for c in 0..3 {
            dst[c * canvas_h * canvas_w..(c + 1) * canvas_h * canvas_w].fill(fill[c]);
            for y in 0..h {
                let d0 = (c * canvas_h + y + offset_y) * canvas_w + offset_x;
                let s0 = (c * h + y) * w;
                dst[d0..d0 + w].copy_from_slice(&src[s0..s0 + w]);
            }
        }
    }
    Ok(TrainSample {
        image,
        boxes: s
            .boxes
            .iter()
            .map(|b| b.translate(offset_x as f64, offset_y as f64))
            .collect(),
        classes: s.classes.clone(),
        box_weights: s.box_weights.clone(),
    })
}

/// Canvas scaled by a ratio drawn from `[1, max_ratio]`, image at a uniform
/// offset.
pub fn random_expand<R: Rng + ?Sized>(
    s: &TrainSample,
    max_ratio: f64,
    fill: [f32; 3],
    rng: &mut R,
) -> Result<TrainSample> {
    if !(max_ratio >= 1.0) {
        return Err(Error::InvalidArgument(format!("expand ratio {max_ratio} below 1")));
    }
    let ratio = if max_ratio > 1.0 { rng.random_range(1.0..=max_ratio) } else { 1.0 };
    let (h, w) = (s.height(), s.width());
    let (ch, cw) = ((h as f64 * ratio).round() as usize, (w as f64 * ratio).round() as usize);
    let ox = rng.random_range(0..=cw - w);
    let oy = rng.random_range(0..=ch - h);
    expand_with(s, ch, cw, ox, oy, fill)
}

/// Crops to `window`. Boxes whose center lies inside are clipped to it and
/// kept when at least `min_keep` of their area survives. Returns `None`
/// when no box survives.
pub fn crop_with_window(s: &TrainSample, window: Rect, min_keep: f64) -> Result<Option<TrainSample>> {
    let (h, w) = (s.height(), s.width());
    if window.x0 >= window.x1 || window.y0 >= window.y1 || window.x1 > w || window.y1 > h {
        return Err(Error::InvalidArgument(format!("crop window {window:?} invalid for {w}x{h}")));
    }
    let frame = window.to_bbox();
    let mut out = TrainSample {
        image: Tensor::zeros(&[3, 0, 0]),
        boxes: Vec::new(),
        classes: Vec::new(),
        box_weights: Vec::new(),
    };
    for ((b, &c), &wt) in s.boxes.iter().zip(&s.classes).zip(&s.box_weights) {
        let (cx, cy) = b.center();
        if !frame.contains_point(cx, cy) {
            continue;
        }
        let Some(clipped) = b.intersect(&frame) else { continue };
        let kept = if b.area() > 0.0 { clipped.area() / b.area() } else { 1.0 };
        if kept < min_keep {
            continue;
        }
        out.boxes.push(clipped.translate(-frame.x_min, -frame.y_min));
        out.classes.push(c);
        out.box_weights.push(wt);
    }
    if out.boxes.is_empty() {
        return Ok(None);
    }
    let (nh, nw) = (window.y1 - window.y0, window.x1 - window.x0);
    let mut image = Tensor::zeros(&[3, nh, nw]);
    {
        let dst = image.data_mut();
        let src = s.image.data();
        for c in 0..3 {
            for y in 0..nh {
                let s0 = (c * h + y + window.y0) * w + window.x0;
                let d0 = (c * nh + y) * nw;
                dst[d0..d0 + nw].copy_from_slice(&src[s0..s0 + nw]);
            }
        }
    }
    out.image = image;
    Ok(Some(out))
}

/// Tries up to [`CROP_ATTEMPTS`] random windows with sides in
/// `[min_scale, 1]` of the image; returns the input when none keeps a box.
pub fn random_crop<R: Rng + ?Sized>(s: &TrainSample, min_keep: f64, min_scale: f64, rng: &mut R) -> Result<TrainSample> {
    if !(0.0..=1.0).contains(&min_keep) {
        return Err(Error::InvalidArgument(format!("min_keep {min_keep} outside [0, 1]")));
    }
    if !(min_scale > 0.0 && min_scale <= 1.0) {
        return Err(Error::InvalidArgument(format!("crop min_scale {min_scale} outside (0, 1]")));
    }
    let (h, w) = (s.height(), s.width());
    for _ in 0..CROP_ATTEMPTS {
        let cw = ((w as f64 * rng.random_range(min_scale..=1.0)).round() as usize).clamp(1, w);
        let ch = ((h as f64 * rng.random_range(min_scale..=1.0)).round() as usize).clamp(1, h);
        let x0 = rng.random_range(0..=w - cw);
        let y0 = rng.random_range(0..=h - ch);
        let window = Rect {
            x0,
            y0,
            x1: x0 + cw,
            y1: y0 + ch,
        };
        if let Some(out) = crop_with_window(s, window, min_keep)? {
            return Ok(out);
        }
    }
    Ok(s.clone())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpandConfig {
    pub enabled: bool,
    pub prob: f64,
    pub max_ratio: f64,
    pub fill: [f32; 3],
}

impl Default for ExpandConfig {
    fn default() -> Self {
        ExpandConfig {
            enabled: true,
            prob: 0.5,
            max_ratio: 2.0,
            fill: [0.485, 0.456, 0.406],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CropConfig {
    pub enabled: bool,
    pub prob: f64,
    /// Minimum fraction of a box's area that must remain after clipping.
    pub min_keep: f64,
    pub min_scale: f64,
}

impl Default for CropConfig {
    fn default() -> Self {
        CropConfig {
            enabled: true,
            prob: 0.5,
            min_keep: 0.3,
            min_scale: 0.5,
        }
    }
}
