use rand::Rng;
use rand_distr::{Beta, Distribution};

use super::TrainSample;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::tensor::Tensor;

/// Default shape parameter of the symmetric Beta distribution for λ.
pub const DEFAULT_BETA: f64 = 1.5;

/// Draws λ ~ Beta(a, a).
pub fn sample_lambda<R: Rng + ?Sized>(a: f64, rng: &mut R) -> Result<f64> {
    let beta = Beta::new(a, a).map_err(|e| Error::InvalidArgument(format!("beta({a}, {a}): {e}")))?;
    Ok(beta.sample(rng))
}

fn check_pair(a: &TrainSample, b: &TrainSample) -> Result<()> {
    b.image.ensure_shape("mix", a.image.shape())
}

fn check_lambda(lam: f64) -> Result<()> {
    if (0.0..=1.0).contains(&lam) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("mixing weight {lam} outside [0, 1]")))
    }
}

/// `lam·a + (1−lam)·b`; boxes are the union with weights scaled by `lam`
/// and `1 − lam`. Boxes left with zero weight are dropped.
pub fn mixup(a: &TrainSample, b: &TrainSample, lam: f64) -> Result<TrainSample> {
    check_pair(a, b)?;
    check_lambda(lam)?;
    let data = a
        .image
        .data()
        .iter()
        .zip(b.image.data())
        .map(|(&x, &y)| ((lam * x as f64 + (1.0 - lam) * y as f64) as f32).clamp(0.0, 1.0))
        .collect();
    let mut out = TrainSample {
        image: Tensor::from_vec(a.image.shape(), data)?,
        boxes: Vec::new(),
        classes: Vec::new(),
        box_weights: Vec::new(),
    };
    for (src, scale) in [(a, lam), (b, 1.0 - lam)] {
        for ((&bbox, &c), &w) in src.boxes.iter().zip(&src.classes).zip(&src.box_weights) {
            if w * scale > 0.0 {
                out.boxes.push(bbox);
                out.classes.push(c);
                out.box_weights.push(w * scale);
            }
        }
    }
    Ok(out)
}

/// Integer pixel rectangle `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
}

impl Rect {
    pub fn area(&self) -> usize {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    pub fn to_bbox(self) -> BBox {
        BBox::new(self.x0 as f64, self.y0 as f64, self.x1 as f64, self.y1 as f64)
    }

    fn contains_center(&self, b: &BBox) -> bool {
        let (cx, cy) = b.center();
        self.area() > 0 && self.to_bbox().contains_point(cx, cy)
    }
}

/// Patch extents `round(W·√(1−λ)) × round(H·√(1−λ))` before clipping.
pub fn cutmix_patch_size(height: usize, width: usize, lam: f64) -> (usize, usize) {
    let s = (1.0 - lam).max(0.0).sqrt();
    ((height as f64 * s).round() as usize, (width as f64 * s).round() as usize)
}

/// Draws the CutMix rectangle: patch centered uniformly, clipped to the
/// image. Also returns the unclipped patch area.
pub fn cutmix_rect<R: Rng + ?Sized>(height: usize, width: usize, lam: f64, rng: &mut R) -> (Rect, usize) {
    let (ph, pw) = cutmix_patch_size(height, width, lam);
    let cy = rng.random_range(0..height) as i64;
    let cx = rng.random_range(0..width) as i64;
    let clip = |v: i64, hi: usize| v.clamp(0, hi as i64) as usize;
    let (y0, x0) = (cy - (ph as i64) / 2, cx - (pw as i64) / 2);
    let rect = Rect {
        x0: clip(x0, width),
        y0: clip(y0, height),
        x1: clip(x0 + pw as i64, width),
        y1: clip(y0 + ph as i64, height),
    };
    (rect, ph * pw)
}

/// Pastes `rect` of `b` into `a`.
///
/// Boxes of `a` survive when their center lies outside the patch, weighted
/// by their still-visible area fraction. Boxes of `b` survive when their
/// center lies inside, clipped to the patch and weighted by the retained
/// area fraction.
pub fn cutmix_with_rect(a: &TrainSample, b: &TrainSample, rect: Rect) -> Result<TrainSample> {
    check_pair(a, b)?;
    let (h, w) = (a.height(), a.width());
    if rect.x0 > rect.x1 || rect.y0 > rect.y1 || rect.x1 > w || rect.y1 > h {
        return Err(Error::InvalidArgument(format!("cutmix rectangle {rect:?} outside {w}x{h}")));
    }
    let mut image = a.image.clone();
    {
        let dst = image.data_mut();
        let src = b.image.data();
        for c in 0..3 {
            for y in rect.y0..rect.y1 {
                let row = (c * h + y) * w;
                dst[row + rect.x0..row + rect.x1].copy_from_slice(&src[row + rect.x0..row + rect.x1]);
            }
        }
    }
    let patch = rect.to_bbox();
    let mut out = TrainSample {
        image,
        boxes: Vec::new(),
        classes: Vec::new(),
        box_weights: Vec::new(),
    };
    for ((bbox, &c), &wt) in a.boxes.iter().zip(&a.classes).zip(&a.box_weights) {
        if rect.contains_center(bbox) {
            continue;
        }
        let covered = if rect.area() > 0 {
            bbox.intersect(&patch).map_or(0.0, |i| i.area())
        } else {
            0.0
        };
        let visible = if bbox.area() > 0.0 { 1.0 - covered / bbox.area() } else { 1.0 };
        if visible > 0.0 {
            out.boxes.push(*bbox);
            out.classes.push(c);
            out.box_weights.push(wt * visible);
        }
    }
    for ((bbox, &c), &wt) in b.boxes.iter().zip(&b.classes).zip(&b.box_weights) {
        if !rect.contains_center(bbox) {
            continue;
        }
        let Some(clipped) = bbox.intersect(&patch) else { continue };
        let kept = if bbox.area() > 0.0 { clipped.area() / bbox.area() } else { 1.0 };
        out.boxes.push(clipped);
        out.classes.push(c);
        out.box_weights.push(wt * kept);
    }
    Ok(out)
}

/// CutMix with a randomly placed patch of area ratio `1 − lam`.
pub fn cutmix<R: Rng + ?Sized>(a: &TrainSample, b: &TrainSample, lam: f64, rng: &mut R) -> Result<TrainSample> {
    check_pair(a, b)?;
    check_lambda(lam)?;
    let (rect, _) = cutmix_rect(a.height(), a.width(), lam, rng);
    cutmix_with_rect(a, b, rect)
}
