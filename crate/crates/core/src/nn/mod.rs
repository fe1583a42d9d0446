//! A small hand-differentiated CNN stack.
//!
//! Every layer caches what its backward pass needs during `forward` and
//! accumulates parameter gradients in `backward`. There is no graph engine;
//! composite blocks chain their children's backward calls in reverse order.

mod batchnorm;
mod ema;
mod flops;
mod gradcheck;
mod layers;
mod lite;
mod model;
mod ops;
mod optim;
mod vd;

pub use batchnorm::BatchNorm2d;
pub use ema::{ema_update, EmaState, DEFAULT_EMA_DECAY};
pub use flops::{flops_count, lite_vs_plain_ratio, FlopsReport, FlopsRow, LayerDesc, LayerKind};
pub use gradcheck::{
    check_layer, grad_check, grad_check_piecewise, grad_check_with_step, relative_error, LayerCheck, DEFAULT_STEP,
    KINK_TOL,
};
pub use layers::{Conv2d, ConvBn};
pub use lite::{LiteBlock, LITE_KERNELS};
pub use model::{
    reg_distances, reg_distances_backward, sigmoid_backward, sigmoid_probs, DetectorOutput, ModelConfig, ToyDetector,
    REG_RAW_LIMIT, STAGE_WIDTHS,
};
pub use ops::{
    avg_pool2x2, avg_pool2x2_backward, conv2d_backward, conv2d_forward, conv_output_extent, relu_backward,
    relu_forward, shortcut_add, upsample_nearest, upsample_nearest_backward, ConvGrads, ConvSpec,
};
pub use optim::{lr_schedule, sgd_step, LrSchedule, Sgd};
pub use vd::VdDownsample;

use crate::error::Result;
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// A named parameter or buffer handed out by [`Layer::visit`].
pub enum Slot<'a, T> {
    Param(String, &'a mut Param<T>),
    Buffer(String, &'a mut Tensor<T>),
}

impl<T> Slot<'_, T> {
    pub fn name(&self) -> &str {
        match self {
            Slot::Param(n, _) | Slot::Buffer(n, _) => n,
        }
    }
}

pub trait Layer<T: Real> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>>;

    /// Propagates `grad_out` (gradient w.r.t. the last forward output) and
    /// accumulates parameter gradients. Returns the input gradient.
    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>>;

    /// Visits parameters and buffers in declaration order.
    fn visit<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(Slot<'a, T>));

    /// Appends static layer descriptions for an input of `(c, h, w)` and
    /// returns the output `(c, h, w)`.
    fn describe(&self, prefix: &str, input: (usize, usize, usize), out: &mut Vec<LayerDesc>) -> (usize, usize, usize);

    fn zero_grad(&mut self) {
        self.visit("", &mut |slot| {
            if let Slot::Param(_, p) = slot {
                p.zero_grad();
            }
        });
    }
}
