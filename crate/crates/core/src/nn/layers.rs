use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{conv2d_backward, conv2d_forward, relu_backward, relu_forward, ConvSpec};
use super::{BatchNorm2d, Layer, LayerDesc, LayerKind, Mode, Param, Slot};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    pub spec: ConvSpec,
    input: Option<Tensor<T>>,
}

impl<T: Real> Conv2d<T> {
    pub fn from_weight(weight: Tensor<T>, bias: Option<Tensor<T>>, spec: ConvSpec) -> Self {
        Conv2d {
            weight: Param::new(weight),
            bias: bias.map(Param::new),
            spec,
            input: None,
        }
    }

    /// He-normal initialized square kernel; padding keeps the extent at
    /// stride 1.
    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        with_bias: bool,
        rng: &mut R,
    ) -> Self {
        let fan_in = (cin / groups) * kernel * kernel;
        let std = (2.0 / fan_in as f64).sqrt();
        let weight = normal_tensor(&[cout, cin / groups, kernel, kernel], std, rng);
        let bias = with_bias.then(|| Tensor::zeros(&[cout]));
        Conv2d::from_weight(weight, bias, ConvSpec::new(stride, kernel / 2, groups))
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.dim(0)
    }
}

pub(crate) fn normal_tensor<T: Real, R: Rng + ?Sized>(shape: &[usize], std: f64, rng: &mut R) -> Tensor<T> {
    let dist = Normal::new(0.0, std).expect("finite std");
    Tensor::from_fn(shape, |_| T::lit(dist.sample(rng)))
}

impl<T: Real> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Result<Tensor<T>> {
        let y = conv2d_forward(x, &self.weight.value, self.bias.as_ref().map(|b| &b.value), &self.spec)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("conv backward before forward".into()))?;
        let g = conv2d_backward(grad_out, x, &self.weight.value, &self.spec)?;
        self.weight.grad.add_assign(&g.grad_weight)?;
        if let Some(b) = self.bias.as_mut() {
            b.grad.add_assign(&g.grad_bias)?;
        }
        Ok(g.grad_x)
    }

    fn visit<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(Slot<'a, T>)) {
        f(Slot::Param(format!("{prefix}weight"), &mut self.weight));
        if let Some(b) = self.bias.as_mut() {
            f(Slot::Param(format!("{prefix}bias"), b));
        }
    }

    fn describe(&self, prefix: &str, input: (usize, usize, usize), out: &mut Vec<LayerDesc>) -> (usize, usize, usize) {
        let s = self.weight.value.shape();
        let (cout, kh, kw) = (s[0], s[2], s[3]);
        let oh = (input.1 + 2 * self.spec.padding).saturating_sub(kh) / self.spec.stride + 1;
        let ow = (input.2 + 2 * self.spec.padding).saturating_sub(kw) / self.spec.stride + 1;
        out.push(LayerDesc {
            name: prefix.trim_end_matches('.').to_string(),
            kind: LayerKind::Conv {
                cin: input.0,
                kh,
                kw,
                groups: self.spec.groups,
            },
            out_channels: cout,
            out_hw: Some((oh, ow)),
        });
        (cout, oh, ow)
    }
}

/// Convolution, batch norm and an optional ReLU.
#[derive(Debug, Clone)]
pub struct ConvBn<T> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    pub relu: bool,
    output: Option<Tensor<T>>,
}

impl<T: Real> ConvBn<T> {
    pub fn from_parts(conv: Conv2d<T>, bn: BatchNorm2d<T>, relu: bool) -> Self {
        ConvBn {
            conv,
            bn,
            relu,
            output: None,
        }
    }

    pub fn new<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        stride: usize,
        groups: usize,
        relu: bool,
        rng: &mut R,
    ) -> Self {
        ConvBn::from_parts(
            Conv2d::new(cin, cout, kernel, stride, groups, false, rng),
            BatchNorm2d::new(cout),
            relu,
        )
    }
}

impl<T: Real> Layer<T> for ConvBn<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.conv.forward(x, mode)?;
        let y = self.bn.forward(&y, mode)?;
        if self.relu {
            let y = relu_forward(&y);
            self.output = Some(y.clone());
            Ok(y)
        } else {
            Ok(y)
        }
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = if self.relu {
            let out = self
                .output
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("backward before forward".into()))?;
            relu_backward(grad_out, out)?
        } else {
            grad_out.clone()
        };
        let g = self.bn.backward(&g)?;
        self.conv.backward(&g)
    }

    fn visit<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(Slot<'a, T>)) {
        self.conv.visit(&format!("{prefix}conv."), f);
        self.bn.visit(&format!("{prefix}bn."), f);
    }

    fn describe(&self, prefix: &str, input: (usize, usize, usize), out: &mut Vec<LayerDesc>) -> (usize, usize, usize) {
        let s = self.conv.describe(&format!("{prefix}conv."), input, out);
        self.bn.describe(&format!("{prefix}bn."), s, out)
    }
}
