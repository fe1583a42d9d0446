use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Elliptical Gaussian in feature-map coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianSpec {
    pub center_x: f64,
    pub center_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    /// Half-extent of the elliptical support, in cells, per axis.
    pub support_x: f64,
    pub support_y: f64,
}

impl GaussianSpec {
    /// Sizes the kernel from a box already mapped to feature scale:
    /// `sigma = alpha * extent / 6`, support `3 sigma` (at least one cell).
    pub fn for_feature_box(center: (f64, f64), width: f64, height: f64, alpha: f64) -> Self {
        let sigma_x = (alpha * width / 6.0).max(f64::MIN_POSITIVE);
        let sigma_y = (alpha * height / 6.0).max(f64::MIN_POSITIVE);
        GaussianSpec {
            center_x: center.0,
            center_y: center.1,
            sigma_x,
            sigma_y,
            support_x: (3.0 * sigma_x).max(1.0),
            support_y: (3.0 * sigma_y).max(1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_x > 0.0
            && self.sigma_y > 0.0
            && self.support_x >= 1.0
            && self.support_y >= 1.0
            && self.center_x.is_finite()
            && self.center_y.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid gaussian spec {self:?}")))
        }
    }

    /// The integer cell the peak is placed on.
    pub fn peak_cell(&self) -> (usize, usize) {
        (self.center_x.round() as usize, self.center_y.round() as usize)
    }

    /// Kernel value at integer cell `(x, y)`, zero outside the support.
    pub fn value_at(&self, x: usize, y: usize) -> f64 {
        let (px, py) = self.peak_cell();
        let dx = x as f64 - px as f64;
        let dy = y as f64 - py as f64;
        let ex = dx / self.support_x;
        let ey = dy / self.support_y;
        if ex * ex + ey * ey > 1.0 {
            return 0.0;
        }
        (-(dx * dx / (2.0 * self.sigma_x * self.sigma_x)
            + dy * dy / (2.0 * self.sigma_y * self.sigma_y)))
            .exp()
    }

    /// Inclusive cell window `(x0, y0, x1, y1)` containing the support,
    /// clipped to a `w × h` map.
    pub(crate) fn window(&self, w: usize, h: usize) -> (usize, usize, usize, usize) {
        let (px, py) = self.peak_cell();
        let rx = self.support_x.floor() as usize;
        let ry = self.support_y.floor() as usize;
        (
            px.saturating_sub(rx),
            py.saturating_sub(ry),
            (px + rx).min(w - 1),
            (py + ry).min(h - 1),
        )
    }
}

/// Renders `spec` onto an `h × w` map. The peak sits on the cell nearest
/// the center and has value exactly 1.
pub fn gaussian_kernel<T: Real>(spec: &GaussianSpec, h: usize, w: usize) -> Result<Tensor<T>> {
    spec.validate()?;
    let in_map = spec.center_x >= 0.0
        && spec.center_y >= 0.0
        && spec.center_x < w as f64
        && spec.center_y < h as f64;
    let (px, py) = spec.peak_cell();
    if !in_map || px >= w || py >= h {
        return Err(Error::CenterOutOfMap {
            x: spec.center_x,
            y: spec.center_y,
            width: w,
            height: h,
        });
    }
    let mut out = Tensor::zeros(&[h, w]);
    let (x0, y0, x1, y1) = spec.window(w, h);
    let data = out.data_mut();
    for y in y0..=y1 {
        for x in x0..=x1 {
            data[y * w + x] = T::lit(spec.value_at(x, y));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn round_spec(cx: f64, cy: f64, sigma: f64, support: f64) -> GaussianSpec {
        GaussianSpec {
            center_x: cx,
            center_y: cy,
            sigma_x: sigma,
            sigma_y: sigma,
            support_x: support,
            support_y: support,
        }
    }

    #[test]
    fn unit_sigma_values() {
        let k = gaussian_kernel::<f64>(&round_spec(5.0, 5.0, 1.0, 3.0), 11, 11).unwrap();
        assert_eq!(k.at(&[5, 5]), 1.0);
        assert!((k.at(&[5, 6]) - (-0.5f64).exp()).abs() < 1e-15);
        assert!((k.at(&[5, 6]) - 0.6065).abs() < 1e-4);
    }

    #[test]
    fn zero_outside_support() {
        let spec = round_spec(5.0, 5.0, 1.0, 2.0);
        let k = gaussian_kernel::<f64>(&spec, 11, 11).unwrap();
        for y in 0..11 {
            for x in 0..11 {
                let dx = x as f64 - 5.0;
                let dy = y as f64 - 5.0;
                if dx * dx + dy * dy > 4.0 {
                    assert_eq!(k.at(&[y, x]), 0.0, "cell ({x},{y})");
                } else {
                    assert!(k.at(&[y, x]) > 0.0);
                }
            }
        }
    }

    #[test]
    fn mirror_symmetric() {
        let spec = GaussianSpec {
            center_x: 6.0,
            center_y: 4.0,
            sigma_x: 1.7,
            sigma_y: 0.9,
            support_x: 5.1,
            support_y: 2.7,
        };
        let k = gaussian_kernel::<f64>(&spec, 9, 13).unwrap();
        for y in 0..9 {
            for x in 0..13 {
                assert_eq!(k.at(&[y, x]), k.at(&[8 - y, x]));
                assert_eq!(k.at(&[y, x]), k.at(&[y, 12 - x]));
            }
        }
    }

    #[test]
    fn center_outside_map_is_an_error() {
        let spec = round_spec(11.0, 5.0, 1.0, 3.0);
        assert!(matches!(
            gaussian_kernel::<f64>(&spec, 11, 11),
            Err(Error::CenterOutOfMap { .. })
        ));
        let spec = round_spec(-0.5, 5.0, 1.0, 3.0);
        assert!(gaussian_kernel::<f64>(&spec, 11, 11).is_err());
    }

    #[test]
    fn feature_box_sizing_follows_alpha() {
        let s = GaussianSpec::for_feature_box((8.0, 8.0), 12.0, 6.0, 0.54);
        assert!((s.sigma_x - 0.54 * 2.0).abs() < 1e-15);
        assert!((s.sigma_y - 0.54).abs() < 1e-15);
        assert!((s.support_x - 3.0 * 0.54 * 2.0).abs() < 1e-12);
        assert!((s.support_y - 1.62).abs() < 1e-12);
        let tiny = GaussianSpec::for_feature_box((0.0, 0.0), 0.5, 0.5, 0.54);
        assert_eq!(tiny.support_x, 1.0);
    }
}
