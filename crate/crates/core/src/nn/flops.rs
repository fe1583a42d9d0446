use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{Conv2d, Layer, LiteBlock};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LayerKind {
    Conv { cin: usize, kh: usize, kw: usize, groups: usize },
    BatchNorm,
    Add,
    /// Activations, pooling, upsampling: not counted.
    Other,
}

/// Static description of one layer's output, as produced by [`Layer::describe`].
/// `out_hw == None` marks a shape that is only known at run time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LayerDesc {
    pub name: String,
    pub kind: LayerKind,
    pub out_channels: usize,
    pub out_hw: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlopsRow {
    pub name: String,
    pub kind: LayerKind,
    pub macs: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FlopsReport {
    pub rows: Vec<FlopsRow>,
    pub total: u64,
}

impl FlopsReport {
    /// MACs of convolution rows only.
    pub fn conv_macs(&self) -> u64 {
        self.rows
            .iter()
            .filter(|r| matches!(r.kind, LayerKind::Conv { .. }))
            .map(|r| r.macs)
            .sum()
    }
}

fn layer_macs(desc: &LayerDesc) -> Result<u64> {
    let (h, w) = desc
        .out_hw
        .ok_or_else(|| Error::DynamicShape(desc.name.clone()))?;
    let elements = (desc.out_channels * h * w) as u64;
    Ok(match desc.kind {
        LayerKind::Conv { cin, kh, kw, groups } => elements * (kh * kw * cin / groups) as u64,
        LayerKind::BatchNorm | LayerKind::Add => elements,
        LayerKind::Other => 0,
    })
}

/// Multiply-accumulate count per layer and in total.
pub fn flops_count(layers: &[LayerDesc]) -> Result<FlopsReport> {
    let rows = layers
        .iter()
        .map(|d| {
            Ok(FlopsRow {
                name: d.name.clone(),
                kind: d.kind,
                macs: layer_macs(d)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let total = rows.iter().map(|r| r.macs).sum();
    Ok(FlopsReport { rows, total })
}

/// Convolution MACs of a `c → c` lite block over those of a plain 5×5 conv,
/// both counted on an `h × w` map.
pub fn lite_vs_plain_ratio(channels: usize, h: usize, w: usize) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let lite = LiteBlock::<f32>::new(channels, channels, &mut rng);
    let plain = Conv2d::<f32>::new(channels, channels, 5, 1, 1, false, &mut rng);
    let mut a = Vec::new();
    lite.describe("lite.", (channels, h, w), &mut a);
    let mut b = Vec::new();
    plain.describe("plain.", (channels, h, w), &mut b);
    Ok(flops_count(&a)?.conv_macs() as f64 / flops_count(&b)?.conv_macs() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(name: &str, cin: usize, cout: usize, k: usize, hw: usize) -> LayerDesc {
        LayerDesc {
            name: name.into(),
            kind: LayerKind::Conv { cin, kh: k, kw: k, groups: 1 },
            out_channels: cout,
            out_hw: Some((hw, hw)),
        }
    }

    #[test]
    fn single_pointwise_conv() {
        assert_eq!(flops_count(&[conv("c", 1, 1, 1, 4)]).unwrap().total, 16);
    }

    #[test]
    fn lite_ratio_matches_formula() {
        let c = 48.0;
        let expected = (2.0 * 25.0 * c + 2.0 * c * c) / (25.0 * c * c);
        let got = lite_vs_plain_ratio(48, 16, 16).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
        assert!((got - 0.1217).abs() < 1e-4);
    }

    #[test]
    fn dynamic_shape_is_an_error() {
        let mut d = conv("c", 1, 1, 1, 4);
        d.out_hw = None;
        assert!(matches!(flops_count(&[d]), Err(Error::DynamicShape(_))));
    }

    #[test]
    fn additive_and_quadratic() {
        let a = conv("a", 3, 8, 3, 10);
        let b = conv("b", 8, 8, 1, 10);
        let ta = flops_count(&[a.clone()]).unwrap().total;
        let tb = flops_count(&[b.clone()]).unwrap().total;
        assert_eq!(flops_count(&[a, b]).unwrap().total, ta + tb);
        let big = conv("a", 3, 8, 3, 20);
        assert_eq!(flops_count(&[big]).unwrap().total, 4 * ta);
    }
}
