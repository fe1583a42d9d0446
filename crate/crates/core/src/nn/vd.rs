use rand::Rng;

use super::ops::{avg_pool2x2, avg_pool2x2_backward, relu_backward, relu_forward};
use super::{ConvBn, Layer, LayerDesc, LayerKind, Mode, Slot};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Residual downsampling block whose shortcut average-pools 2×2 before a
/// 1×1 projection. Main path: 3×3/2 conv-bn-relu, 3×3 conv-bn. Output:
/// `relu(main + shortcut)` at half resolution.
#[derive(Debug, Clone)]
pub struct VdDownsample<T> {
    pub main_a: ConvBn<T>,
    pub main_b: ConvBn<T>,
    pub shortcut: ConvBn<T>,
    output: Option<Tensor<T>>,
}

impl<T: Real> VdDownsample<T> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> Self {
        VdDownsample {
            main_a: ConvBn::new(cin, cout, 3, 2, 1, true, rng),
            main_b: ConvBn::new(cout, cout, 3, 1, 1, false, rng),
            shortcut: ConvBn::new(cin, cout, 1, 1, 1, false, rng),
            output: None,
        }
    }
}

impl<T: Real> Layer<T> for VdDownsample<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if let [_, _, h, w] = *x.shape() {
            if h % 2 != 0 || w % 2 != 0 {
                return Err(Error::InvalidArgument(format!(
                    "vd downsample needs even extents, got {h}x{w}"
                )));
            }
        }
        let main = self.main_a.forward(x, mode)?;
        let mut main = self.main_b.forward(&main, mode)?;
        let pooled = avg_pool2x2(x)?;
        let short = self.shortcut.forward(&pooled, mode)?;
        main.add_assign(&short)?;
        let y = relu_forward(&main);
        self.output = Some(y.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let out = self
            .output
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("vd backward before forward".into()))?;
        let g = relu_backward(grad_out, out)?;
        let gm = self.main_b.backward(&g)?;
        let mut gx = self.main_a.backward(&gm)?;
        let gs = self.shortcut.backward(&g)?;
        gx.add_assign(&avg_pool2x2_backward(&gs)?)?;
        Ok(gx)
    }

    fn visit<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(Slot<'a, T>)) {
        self.main_a.visit(&format!("{prefix}main_a."), f);
        self.main_b.visit(&format!("{prefix}main_b."), f);
        self.shortcut.visit(&format!("{prefix}shortcut."), f);
    }

    fn describe(&self, prefix: &str, input: (usize, usize, usize), out: &mut Vec<LayerDesc>) -> (usize, usize, usize) {
        let s = self.main_a.describe(&format!("{prefix}main_a."), input, out);
        let s = self.main_b.describe(&format!("{prefix}main_b."), s, out);
        let pooled = (input.0, input.1 / 2, input.2 / 2);
        out.push(LayerDesc {
            name: format!("{prefix}pool"),
            kind: LayerKind::Other,
            out_channels: pooled.0,
            out_hw: Some((pooled.1, pooled.2)),
        });
        self.shortcut.describe(&format!("{prefix}shortcut."), pooled, out);
        out.push(LayerDesc {
            name: format!("{prefix}add"),
            kind: LayerKind::Add,
            out_channels: s.0,
            out_hw: Some((s.1, s.2)),
        });
        s
    }
}
