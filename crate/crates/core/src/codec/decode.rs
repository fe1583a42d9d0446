use serde::{Deserialize, Serialize};

use super::encode::box_from_sides;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection<T = f64> {
    pub bbox: BBox<T>,
    pub class_id: usize,
    pub score: T,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecodeConfig {
    pub topk: usize,
    pub score_thresh: f64,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            topk: 100,
            score_thresh: 0.01,
        }
    }
}

fn ensure_chw<T: Real>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::ShapeMismatch {
            op,
            expected: vec![0, 0, 0],
            actual: t.shape().to_vec(),
        }),
    }
}

/// Keeps cells equal to the maximum of their 3×3 neighborhood (per
/// channel, out-of-map neighbors ignored) and zeroes the rest. Ties keep
/// every tied cell.
pub fn peak_mask<T: Real>(heatmap: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = ensure_chw(heatmap, "peak_mask")?;
    let src = heatmap.data();
    let mut out = Tensor::zeros(heatmap.shape());
    let dst = out.data_mut();
    for ch in 0..c {
        let base = ch * h * w;
        for y in 0..h {
            let ys = y.saturating_sub(1)..=(y + 1).min(h - 1);
            for x in 0..w {
                let v = src[base + y * w + x];
                let mut is_max = true;
                'scan: for yy in ys.clone() {
                    for xx in x.saturating_sub(1)..=(x + 1).min(w - 1) {
                        if src[base + yy * w + xx] > v {
                            is_max = false;
                            break 'scan;
                        }
                    }
                }
                if is_max {
                    dst[base + y * w + x] = v;
                }
            }
        }
    }
    Ok(out)
}

/// Turns a post-sigmoid heatmap and side-distance map into detections for
/// an `height × width` input.
///
/// Output is sorted by descending score; equal scores order by
/// `(channel, row, column)` ascending.
pub fn decode<T: Real>(
    class_heatmap: &Tensor<T>,
    reg_map: &Tensor<T>,
    cfg: &DecodeConfig,
    height: usize,
    width: usize,
) -> Result<Vec<Detection<T>>> {
    if cfg.topk == 0 {
        return Err(Error::InvalidArgument("topk must be positive".into()));
    }
    let (c, h, w) = ensure_chw(class_heatmap, "decode")?;
    reg_map.ensure_shape("decode", &[4, h, w])?;
    let peaks = peak_mask(class_heatmap)?;
    let scores = peaks.data();

    let mut order: Vec<usize> = (0..c * h * w).collect();
    // Stable sort keeps the flat (channel, row, column) order among ties.
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let thresh = T::lit(cfg.score_thresh);
    let cells = h * w;
    let reg = reg_map.data();
    let (wf, hf) = (T::lit(width as f64), T::lit(height as f64));
    let mut out = Vec::new();
    for &idx in order.iter().take(cfg.topk) {
        let score = scores[idx];
        if !(score >= thresh) {
            // sorted: nothing after this passes either
            break;
        }
        let class_id = idx / cells;
        let cell = idx % cells;
        let (row, col) = (cell / w, cell % w);
        let sides = [0, 1, 2, 3].map(|k| reg[k * cells + cell].max(T::zero()));
        let bbox = box_from_sides(row, col, sides).clip(wf, hf);
        out.push(Detection {
            bbox,
            class_id,
            score,
        });
    }
    Ok(out)
}
