use serde::{Deserialize, Serialize};

use super::gaussian::{gaussian_kernel, GaussianSpec};
use super::STRIDE;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::real::Real;
use crate::tensor::Tensor;

/// Ground-truth object handed to [`encode`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth<T = f64> {
    pub bbox: BBox<T>,
    pub class_id: usize,
}

/// Per-image training targets at stride [`STRIDE`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTargets<T> {
    /// `C × h × w`, values in `[0, 1]`.
    pub class_heatmap: Tensor<T>,
    /// `4 × h × w` side distances `(left, top, right, bottom)` in input pixels.
    pub reg_target: Tensor<T>,
    /// `h × w` regression sample weights.
    pub weight_map: Tensor<T>,
    /// `h × w`, `-1` for background, else the owning object index.
    pub object_id: Vec<i32>,
    pub objects: Vec<GroundTruth<T>>,
    pub kernels: Vec<GaussianSpec>,
    /// Objects left without any owned cell after overlap resolution.
    pub evicted: Vec<usize>,
    pub image_height: usize,
    pub image_width: usize,
}

impl<T: Real> EncodedTargets<T> {
    pub fn feature_height(&self) -> usize {
        self.weight_map.dim(0)
    }

    pub fn feature_width(&self) -> usize {
        self.weight_map.dim(1)
    }

    pub fn num_classes(&self) -> usize {
        self.class_heatmap.dim(0)
    }

    /// Box implied by the regression target at cell `(row, col)`.
    pub fn reconstruct(&self, row: usize, col: usize) -> BBox<T> {
        let sides = [0, 1, 2, 3].map(|k| self.reg_target.at(&[k, row, col]));
        box_from_sides(row, col, sides)
    }

    pub fn num_owned(&self) -> usize {
        self.object_id.iter().filter(|&&id| id >= 0).count()
    }
}

/// Input-pixel position of feature cell `(row, col)`.
pub fn cell_position<T: Real>(row: usize, col: usize) -> (T, T) {
    let s = T::lit(STRIDE as f64);
    (T::lit(col as f64) * s, T::lit(row as f64) * s)
}

pub fn box_from_sides<T: Real>(row: usize, col: usize, sides: [T; 4]) -> BBox<T> {
    let (px, py) = cell_position::<T>(row, col);
    BBox::new(px - sides[0], py - sides[1], px + sides[2], py + sides[3])
}

/// Feature-map extent for an input extent.
pub fn feature_extent(input: usize) -> usize {
    input.div_ceil(STRIDE)
}

/// Regression sample weights for one object:
/// `log(area) * G / sum(G over owned cells)` on owned cells, zero elsewhere.
/// An empty mask yields all zeros.
pub fn sample_weights<T: Real>(gt: &BBox<T>, kernel: &Tensor<T>, owned: &[bool]) -> Result<Tensor<T>> {
    if kernel.len() != owned.len() {
        return Err(Error::ShapeMismatch {
            op: "sample_weights",
            expected: kernel.shape().to_vec(),
            actual: vec![owned.len()],
        });
    }
    let area = gt.area();
    if !(area > T::zero()) {
        return Err(Error::InvalidBox(format!("zero-area box {gt:?}")));
    }
    let mut out = Tensor::zeros(kernel.shape());
    let total: T = kernel
        .data()
        .iter()
        .zip(owned)
        .filter(|(_, &o)| o)
        .map(|(&g, _)| g)
        .sum();
    if total <= T::zero() {
        return Ok(out);
    }
    let scale = area.ln() / total;
    for ((w, &g), &o) in out.data_mut().iter_mut().zip(kernel.data()).zip(owned) {
        if o {
            *w = g * scale;
        }
    }
    Ok(out)
}

/// Builds training targets for an `height × width` image with
/// `num_classes` classes.
///
/// Contested cells go to the smaller-area object, except that every
/// object keeps its own peak cell. Same-class heatmaps combine by
/// elementwise max.
pub fn encode<T: Real>(
    objects: &[GroundTruth<T>],
    height: usize,
    width: usize,
    num_classes: usize,
    alpha: f64,
) -> Result<EncodedTargets<T>> {
    if height == 0 || width == 0 || num_classes == 0 {
        return Err(Error::InvalidArgument(format!(
            "encode needs positive extents and classes, got {height}x{width}, C={num_classes}"
        )));
    }
    if !(alpha > 0.0) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let h = feature_extent(height);
    let w = feature_extent(width);
    let cells = h * w;
    let (wf, hf) = (T::lit(width as f64), T::lit(height as f64));

    for obj in objects {
        let b = &obj.bbox;
        b.validate()?;
        if !(b.area() > T::zero()) {
            return Err(Error::InvalidBox(format!("zero-area box {b:?}")));
        }
        if b.x_min < T::zero() || b.y_min < T::zero() || b.x_max > wf || b.y_max > hf {
            return Err(Error::InvalidBox(format!(
                "{b:?} outside the {width}x{height} image"
            )));
        }
        if obj.class_id >= num_classes {
            return Err(Error::InvalidArgument(format!(
                "class {} out of range for C={num_classes}",
                obj.class_id
            )));
        }
    }

    let stride = STRIDE as f64;
    let mut kernels = Vec::with_capacity(objects.len());
    let mut maps = Vec::with_capacity(objects.len());
    for obj in objects {
        let b = obj.bbox.cast::<f64>();
        let (cx, cy) = b.center();
        let peak = (
            ((cx / stride).round()).min((w - 1) as f64),
            ((cy / stride).round()).min((h - 1) as f64),
        );
        let spec = GaussianSpec::for_feature_box(peak, b.width() / stride, b.height() / stride, alpha);
        maps.push(gaussian_kernel::<T>(&spec, h, w)?);
        kernels.push(spec);
    }

    let mut class_heatmap = Tensor::<T>::zeros(&[num_classes, h, w]);
    for (obj, map) in objects.iter().zip(&maps) {
        let channel = &mut class_heatmap.data_mut()[obj.class_id * cells..(obj.class_id + 1) * cells];
        for (dst, &v) in channel.iter_mut().zip(map.data()) {
            *dst = dst.max(v);
        }
    }

    // Larger objects first so smaller ones overwrite contested cells; equal
    // areas resolve to the lower index.
    let mut order: Vec<usize> = (0..objects.len()).collect();
    order.sort_by(|&a, &b| {
        let (aa, ab) = (objects[a].bbox.area(), objects[b].bbox.area());
        ab.partial_cmp(&aa)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(b.cmp(&a))
    });
    let mut object_id = vec![-1i32; cells];
    for &i in &order {
        for (dst, &v) in object_id.iter_mut().zip(maps[i].data()) {
            if v > T::zero() {
                *dst = i as i32;
            }
        }
    }
    for &i in &order {
        let (px, py) = kernels[i].peak_cell();
        object_id[py * w + px] = i as i32;
    }

    let mut weight_map = Tensor::zeros(&[h, w]);
    let mut reg_target = Tensor::zeros(&[4, h, w]);
    let mut evicted = Vec::new();
    for (i, obj) in objects.iter().enumerate() {
        let owned: Vec<bool> = object_id.iter().map(|&id| id == i as i32).collect();
        if !owned.iter().any(|&o| o) {
            evicted.push(i);
            continue;
        }
        let weights = sample_weights(&obj.bbox, &maps[i], &owned)?;
        for (dst, (&wv, &o)) in weight_map.data_mut().iter_mut().zip(weights.data().iter().zip(&owned)) {
            if o {
                *dst = wv;
            }
        }
        let b = &obj.bbox;
        let reg = reg_target.data_mut();
        for (cell, _) in owned.iter().enumerate().filter(|(_, &o)| o) {
            let (px, py) = cell_position::<T>(cell / w, cell % w);
            reg[cell] = px - b.x_min;
            reg[cells + cell] = py - b.y_min;
            reg[2 * cells + cell] = b.x_max - px;
            reg[3 * cells + cell] = b.y_max - py;
        }
    }

    Ok(EncodedTargets {
        class_heatmap,
        reg_target,
        weight_map,
        object_id,
        objects: objects.to_vec(),
        kernels,
        evicted,
        image_height: height,
        image_width: width,
    })
}
