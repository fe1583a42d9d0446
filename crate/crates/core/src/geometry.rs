//! Axis-aligned box arithmetic: IoU, GIoU and the analytic GIoU gradient.
//!
//! All functions are pure. Boxes use continuous pixel coordinates; callers
//! are responsible for keeping both operands in the same frame.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox<T = f64> {
    pub x_min: T,
    pub y_min: T,
    pub x_max: T,
    pub y_max: T,
}

impl<T: Real> BBox<T> {
    pub const fn new(x_min: T, y_min: T, x_max: T, y_max: T) -> Self {
        BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        }
    }

    pub fn from_array(v: [T; 4]) -> Self {
        BBox::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_array(self) -> [T; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    /// COCO `[x, y, w, h]` to corner form.
    pub fn from_xywh(x: T, y: T, w: T, h: T) -> Self {
        BBox::new(x, y, x + w, y + h)
    }

    pub fn width(&self) -> T {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> T {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> T {
        self.width() * self.height()
    }

    pub fn center(&self) -> (T, T) {
        let half = T::lit(0.5);
        (
            (self.x_min + self.x_max) * half,
            (self.y_min + self.y_max) * half,
        )
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
            && self.x_min <= self.x_max
            && self.y_min <= self.y_max
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(Error::InvalidBox(format!("{self:?}")))
        }
    }

    pub fn translate(&self, dx: T, dy: T) -> Self {
        BBox::new(self.x_min + dx, self.y_min + dy, self.x_max + dx, self.y_max + dy)
    }

    pub fn scale(&self, sx: T, sy: T) -> Self {
        BBox::new(self.x_min * sx, self.y_min * sy, self.x_max * sx, self.y_max * sy)
    }

    /// Intersection with `other`, or `None` when they do not overlap with
    /// positive area.
    pub fn intersect(&self, other: &Self) -> Option<Self> {
        let b = BBox::new(
            self.x_min.max(other.x_min),
            self.y_min.max(other.y_min),
            self.x_max.min(other.x_max),
            self.y_max.min(other.y_max),
        );
        (b.x_min < b.x_max && b.y_min < b.y_max).then_some(b)
    }

    /// Clamps every coordinate into `[0, width] × [0, height]`.
    pub fn clip(&self, width: T, height: T) -> Self {
        let cx = |v: T| v.max(T::zero()).min(width);
        let cy = |v: T| v.max(T::zero()).min(height);
        BBox::new(cx(self.x_min), cy(self.y_min), cx(self.x_max), cy(self.y_max))
    }

    pub fn cast<U: Real>(&self) -> BBox<U> {
        BBox::new(
            U::lit(self.x_min.as_f64()),
            U::lit(self.y_min.as_f64()),
            U::lit(self.x_max.as_f64()),
            U::lit(self.y_max.as_f64()),
        )
    }

    pub fn contains_point(&self, x: T, y: T) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

fn overlap_1d<T: Real>(a0: T, a1: T, b0: T, b1: T) -> T {
    (a1.min(b1) - a0.max(b0)).max(T::zero())
}

fn intersection_area<T: Real>(a: &BBox<T>, b: &BBox<T>) -> T {
    overlap_1d(a.x_min, a.x_max, b.x_min, b.x_max) * overlap_1d(a.y_min, a.y_max, b.y_min, b.y_max)
}

fn enclosing_area<T: Real>(a: &BBox<T>, b: &BBox<T>) -> T {
    let w = a.x_max.max(b.x_max) - a.x_min.min(b.x_min);
    let h = a.y_max.max(b.y_max) - a.y_min.min(b.y_min);
    w * h
}

/// Intersection over union; 0 when the union has zero area.
pub fn iou<T: Real>(a: &BBox<T>, b: &BBox<T>) -> T {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= T::zero() {
        T::zero()
    } else {
        inter / union
    }
}

/// Generalized IoU: `iou - (enclosing - union) / enclosing`, or 0 when the
/// enclosing box has zero area.
pub fn giou<T: Real>(pred: &BBox<T>, gt: &BBox<T>) -> T {
    let enclosing = enclosing_area(pred, gt);
    if enclosing <= T::zero() {
        return T::zero();
    }
    let inter = intersection_area(pred, gt);
    let union = pred.area() + gt.area() - inter;
    let iou = if union <= T::zero() {
        T::zero()
    } else {
        inter / union
    };
    iou - (enclosing - union) / enclosing
}

/// Derivative weight of `max(a, b)` with respect to `a`. Ties split evenly,
/// which makes the derivative the mean of the two one-sided derivatives.
fn max_weight<T: Real>(a: T, b: T) -> T {
    if a > b {
        T::one()
    } else if a < b {
        T::zero()
    } else {
        T::lit(0.5)
    }
}

/// Per-axis partials of the overlap length and the enclosing extent with
/// respect to the predicted `(min, max)` edges.
struct AxisTerms<T> {
    overlap: T,
    d_overlap: [T; 2],
    extent: T,
    d_extent: [T; 2],
}

fn axis_terms<T: Real>(p0: T, p1: T, g0: T, g1: T) -> AxisTerms<T> {
    let raw = p1.min(g1) - p0.max(g0);
    let active = max_weight(raw, T::zero());
    // d(min(p1, g1))/dp1 is the max weight of (-p1) against (-g1).
    let d_overlap = [
        -max_weight(p0, g0) * active,
        max_weight(-p1, -g1) * active,
    ];
    AxisTerms {
        overlap: raw.max(T::zero()),
        d_overlap,
        extent: p1.max(g1) - p0.min(g0),
        d_extent: [-max_weight(-p0, -g0), max_weight(p1, g1)],
    }
}

/// Analytic gradient of [`giou`] with respect to `pred`'s
/// `(x_min, y_min, x_max, y_max)`.
///
/// Where two edges coincide the result is the average of the one-sided
/// derivatives, i.e. the limit of a central difference.
pub fn giou_grad<T: Real>(pred: &BBox<T>, gt: &BBox<T>) -> Result<[T; 4]> {
    let pw = pred.width();
    let ph = pred.height();
    if !(pw > T::zero() && ph > T::zero()) {
        return Err(Error::DegenerateGradient);
    }
    let x = axis_terms(pred.x_min, pred.x_max, gt.x_min, gt.x_max);
    let y = axis_terms(pred.y_min, pred.y_max, gt.y_min, gt.y_max);

    let inter = x.overlap * y.overlap;
    let union = pw * ph + gt.area() - inter;
    let enclosing = x.extent * y.extent;

    // d/d(x_min, y_min, x_max, y_max)
    let d_inter = [
        x.d_overlap[0] * y.overlap,
        y.d_overlap[0] * x.overlap,
        x.d_overlap[1] * y.overlap,
        y.d_overlap[1] * x.overlap,
    ];
    let d_area = [-ph, -pw, ph, pw];
    let d_enclosing = [
        x.d_extent[0] * y.extent,
        y.d_extent[0] * x.extent,
        x.d_extent[1] * y.extent,
        y.d_extent[1] * x.extent,
    ];

    // giou = inter/union - 1 + union/enclosing
    let mut grad = [T::zero(); 4];
    for k in 0..4 {
        let d_union = d_area[k] - d_inter[k];
        grad[k] = d_inter[k] / union - inter * d_union / (union * union) + d_union / enclosing
            - union * d_enclosing[k] / (enclosing * enclosing);
    }
    Ok(grad)
}
