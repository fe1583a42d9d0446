use rand::Rng;

use super::{BatchNorm2d, Conv2d, ConvBn, ConvSpec, Layer, LayerDesc, Mode, Slot};
use crate::error::Result;
use crate::real::Real;
use crate::tensor::Tensor;

/// Kernel sizes of the four convolutions, in order.
pub const LITE_KERNELS: [usize; 4] = [5, 1, 1, 5];

/// Depthwise 5×5, pointwise, pointwise, depthwise 5×5; each followed by
/// batch norm and ReLU. Spatial extent is preserved.
#[derive(Debug, Clone)]
pub struct LiteBlock<T> {
    pub dw_in: ConvBn<T>,
    pub pw_a: ConvBn<T>,
    pub pw_b: ConvBn<T>,
    pub dw_out: ConvBn<T>,
}

impl<T: Real> LiteBlock<T> {
    pub fn new<R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> Self {
        let [k0, k1, k2, k3] = LITE_KERNELS;
        LiteBlock {
            dw_in: ConvBn::new(cin, cin, k0, 1, cin, true, rng),
            pw_a: ConvBn::new(cin, cout, k1, 1, 1, true, rng),
            pw_b: ConvBn::new(cout, cout, k2, 1, 1, true, rng),
            dw_out: ConvBn::new(cout, cout, k3, 1, cout, true, rng),
        }
    }

    /// Delta kernels and unit batch norm with `eps = 0`: the block maps any
    /// non-negative input to itself in eval mode.
    pub fn identity(channels: usize) -> Self {
        let delta = |k: usize, groups: usize| {
            let cin_g = channels / groups;
            let mut w = Tensor::<T>::zeros(&[channels, cin_g, k, k]);
            for c in 0..channels {
                let ci = if groups == 1 { c } else { 0 };
                w.set(&[c, ci, k / 2, k / 2], T::one());
            }
            let conv = Conv2d::from_weight(w, None, ConvSpec::new(1, k / 2, groups));
            let mut bn = BatchNorm2d::new(channels);
            bn.eps = 0.0;
            ConvBn::from_parts(conv, bn, true)
        };
        LiteBlock {
            dw_in: delta(5, channels),
            pw_a: delta(1, 1),
            pw_b: delta(1, 1),
            dw_out: delta(5, channels),
        }
    }

    pub fn kernel_sizes(&self) -> [usize; 4] {
        [&self.dw_in, &self.pw_a, &self.pw_b, &self.dw_out].map(|l| l.conv.weight.value.dim(2))
    }

    /// `true` for the layers whose group count equals their channel count.
    pub fn depthwise_layers(&self) -> [bool; 4] {
        [&self.dw_in, &self.pw_a, &self.pw_b, &self.dw_out].map(|l| {
            let cin = l.conv.weight.value.dim(1) * l.conv.spec.groups;
            l.conv.spec.groups > 1 && l.conv.spec.groups == cin
        })
    }
}

impl<T: Real> Layer<T> for LiteBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.dw_in.forward(x, mode)?;
        let y = self.pw_a.forward(&y, mode)?;
        let y = self.pw_b.forward(&y, mode)?;
        self.dw_out.forward(&y, mode)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.dw_out.backward(grad_out)?;
        let g = self.pw_b.backward(&g)?;
        let g = self.pw_a.backward(&g)?;
        self.dw_in.backward(&g)
    }

    fn visit<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(Slot<'a, T>)) {
        self.dw_in.visit(&format!("{prefix}dw_in."), f);
        self.pw_a.visit(&format!("{prefix}pw_a."), f);
        self.pw_b.visit(&format!("{prefix}pw_b."), f);
        self.dw_out.visit(&format!("{prefix}dw_out."), f);
    }

    fn describe(&self, prefix: &str, input: (usize, usize, usize), out: &mut Vec<LayerDesc>) -> (usize, usize, usize) {
        let s = self.dw_in.describe(&format!("{prefix}dw_in."), input, out);
        let s = self.pw_a.describe(&format!("{prefix}pw_a."), s, out);
        let s = self.pw_b.describe(&format!("{prefix}pw_b."), s, out);
        self.dw_out.describe(&format!("{prefix}dw_out."), s, out)
    }
}
