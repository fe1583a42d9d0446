use rand::Rng;
use serde::{Deserialize, Serialize};

use super::layers::normal_tensor;
use super::ops::{upsample_nearest, upsample_nearest_backward};
use super::{Conv2d, ConvBn, Layer, LayerDesc, LayerKind, LiteBlock, Mode, Slot, VdDownsample};
use crate::codec::STRIDE;
use crate::error::{Error, Result};
use crate::losses::PROB_EPS;
use crate::real::Real;
use crate::tensor::Tensor;

/// Channel widths of the four backbone stages.
pub const STAGE_WIDTHS: [usize; 4] = [16, 32, 64, 64];
/// Raw regression outputs are clamped to this range before `exp`.
pub const REG_RAW_LIMIT: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub num_classes: usize,
    pub head_width: usize,
    /// Side distances are `reg_scale · exp(raw)`.
    pub reg_scale: f64,
    /// Initial bias of the localization output, `-ln((1 - p) / p)` for a
    /// prior probability of about 0.1.
    pub loc_bias_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: 3,
            head_width: 48,
            reg_scale: 16.0,
            loc_bias_init: -2.19,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.head_width == 0 {
            return Err(Error::Config("model.num_classes and model.head_width must be positive".into()));
        }
        if !(self.reg_scale > 0.0) {
            return Err(Error::Config("model.reg_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Raw head outputs, both at stride 4.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutput<T> {
    /// `N × C × H/4 × W/4` pre-sigmoid scores.
    pub loc_logits: Tensor<T>,
    /// `N × 4 × H/4 × W/4` pre-exponential side distances.
    pub reg_raw: Tensor<T>,
}

#[derive(Debug, Clone)]
struct Head<T> {
    reduce: ConvBn<T>,
    lite: LiteBlock<T>,
    out: Conv2d<T>,
}

impl<T: Real> Head<T> {
    fn new<R: Rng + ?Sized>(cin: usize, width: usize, cout: usize, rng: &mut R) -> Self {
        Head {
            reduce: ConvBn::new(cin, width, 1, 1, 1, true, rng),
            lite: LiteBlock::new(width, width, rng),
            out: Conv2d::new(width, cout, 1, 1, 1, true, rng),
        }
    }
}

impl<T: Real> Layer<T> for Head<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let y = self.reduce.forward(x, mode)?;
        let y = self.lite.forward(&y, mode)?;
        self.out.forward(&y, mode)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let g = self.out.backward(grad_out)?;
        let g = self.lite.backward(&g)?;
        self.reduce.backward(&g)
    }

    fn visit<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(Slot<'a, T>)) {
        self.reduce.visit(&format!("{prefix}reduce."), f);
        self.lite.visit(&format!("{prefix}lite."), f);
        self.out.visit(&format!("{prefix}out."), f);
    }

    fn describe(&self, prefix: &str, input: (usize, usize, usize), out: &mut Vec<LayerDesc>) -> (usize, usize, usize) {
        let s = self.reduce.describe(&format!("{prefix}reduce."), input, out);
        let s = self.lite.describe(&format!("{prefix}lite."), s, out);
        self.out.describe(&format!("{prefix}out."), s, out)
    }
}

/// A tiny detector: strided conv backbone with vd transitions, a
/// nearest-upsampling path with shortcut additions back to stride 4, and
/// localization / regression heads built around a lite block.
#[derive(Debug, Clone)]
pub struct ToyDetector<T> {
    pub config: ModelConfig,
    stem: ConvBn<T>,
    stage1: ConvBn<T>,
    stage2: VdDownsample<T>,
    stage3: VdDownsample<T>,
    stage4: LiteBlock<T>,
    lateral1: ConvBn<T>,
    lateral2: ConvBn<T>,
    loc_head: Head<T>,
    reg_head: Head<T>,
}

impl<T: Real> ToyDetector<T> {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let [c1, c2, c3, c4] = STAGE_WIDTHS;
        let mut model = ToyDetector {
            stem: ConvBn::new(3, c1, 3, 2, 1, true, rng),
            stage1: ConvBn::new(c1, c1, 3, 2, 1, true, rng),
            stage2: VdDownsample::new(c1, c2, rng),
            stage3: VdDownsample::new(c2, c3, rng),
            stage4: LiteBlock::new(c3, c4, rng),
            lateral1: ConvBn::new(c4, c2, 1, 1, 1, true, rng),
            lateral2: ConvBn::new(c2, c1, 1, 1, 1, true, rng),
            loc_head: Head::new(c1, config.head_width, config.num_classes, rng),
            reg_head: Head::new(c1, config.head_width, 4, rng),
            config,
        };
        if let Some(b) = model.loc_head.out.bias.as_mut() {
            b.value.fill(T::lit(model.config.loc_bias_init));
        }
        let w = &mut model.reg_head.out.weight.value;
        *w = normal_tensor(w.shape(), 1e-3, rng);
        Ok(model)
    }

    pub fn head_width(&self) -> usize {
        self.loc_head.reduce.conv.out_channels()
    }

    pub fn lite_kernel_sizes(&self) -> [usize; 4] {
        self.loc_head.lite.kernel_sizes()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        match *x.shape() {
            [_, 3, h, w] if h % 16 == 0 && w % 16 == 0 && h > 0 && w > 0 => Ok(()),
            _ => Err(Error::InvalidArgument(format!(
                "detector input must be N×3×H×W with H, W divisible by 16, got {:?}",
                x.shape()
            ))),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<DetectorOutput<T>> {
        self.check_input(x)?;
        let s = self.stem.forward(x, mode)?;
        let f2 = self.stage1.forward(&s, mode)?;
        let f3 = self.stage2.forward(&f2, mode)?;
        let f4 = self.stage3.forward(&f3, mode)?;
        let f5 = self.stage4.forward(&f4, mode)?;
        let mut u = upsample_nearest(&self.lateral1.forward(&f5, mode)?, 2)?;
        u.add_assign(&f3)?;
        let mut p = upsample_nearest(&self.lateral2.forward(&u, mode)?, 2)?;
        p.add_assign(&f2)?;
        Ok(DetectorOutput {
            loc_logits: self.loc_head.forward(&p, mode)?,
            reg_raw: self.reg_head.forward(&p, mode)?,
        })
    }

    /// Backpropagates gradients w.r.t. both raw outputs of the last forward
    /// call. Parameter gradients accumulate; the input gradient is returned.
    pub fn backward(&mut self, grad: &DetectorOutput<T>) -> Result<Tensor<T>> {
        let mut gp = self.loc_head.backward(&grad.loc_logits)?;
        gp.add_assign(&self.reg_head.backward(&grad.reg_raw)?)?;
        let gu = self.lateral2.backward(&upsample_nearest_backward(&gp, 2)?)?;
        let g5 = self.lateral1.backward(&upsample_nearest_backward(&gu, 2)?)?;
        let g4 = self.stage4.backward(&g5)?;
        let mut g3 = self.stage3.backward(&g4)?;
        g3.add_assign(&gu)?;
        let mut g2 = self.stage2.backward(&g3)?;
        g2.add_assign(&gp)?;
        let gs = self.stage1.backward(&g2)?;
        self.stem.backward(&gs)
    }

    pub fn visit<'a>(&'a mut self, f: &mut dyn FnMut(Slot<'a, T>)) {
        self.stem.visit("stem.", f);
        self.stage1.visit("stage1.", f);
        self.stage2.visit("stage2.", f);
        self.stage3.visit("stage3.", f);
        self.stage4.visit("stage4.", f);
        self.lateral1.visit("lateral1.", f);
        self.lateral2.visit("lateral2.", f);
        self.loc_head.visit("loc_head.", f);
        self.reg_head.visit("reg_head.", f);
    }

    pub fn zero_grad(&mut self) {
        self.visit(&mut |slot| {
            if let Slot::Param(_, p) = slot {
                p.zero_grad();
            }
        });
    }

    pub fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit(&mut |slot| {
            if let Slot::Param(_, p) = slot {
                n += p.value.len();
            }
        });
        n
    }

    /// Static per-layer shapes for a `3 × height × width` input.
    pub fn describe(&self, height: usize, width: usize) -> Vec<LayerDesc> {
        let mut out = Vec::new();
        let s = self.stem.describe("stem.", (3, height, width), &mut out);
        let f2 = self.stage1.describe("stage1.", s, &mut out);
        let f3 = self.stage2.describe("stage2.", f2, &mut out);
        let f4 = self.stage3.describe("stage3.", f3, &mut out);
        let f5 = self.stage4.describe("stage4.", f4, &mut out);
        let l1 = self.lateral1.describe("lateral1.", f5, &mut out);
        let u = (l1.0, l1.1 * 2, l1.2 * 2);
        out.push(upsample_desc("upsample1", u));
        out.push(add_desc("shortcut1", u));
        let l2 = self.lateral2.describe("lateral2.", u, &mut out);
        let p = (l2.0, l2.1 * 2, l2.2 * 2);
        out.push(upsample_desc("upsample2", p));
        out.push(add_desc("shortcut2", p));
        self.loc_head.describe("loc_head.", p, &mut out);
        self.reg_head.describe("reg_head.", p, &mut out);
        out
    }
}

impl<T: Real> Layer<T> for ToyDetector<T> {
    /// Concatenates both heads along channels: `C + 4` outputs.
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let out = ToyDetector::forward(self, x, mode)?;
        concat_channels(&out.loc_logits, &out.reg_raw)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let c = self.config.num_classes;
        let (loc, reg) = split_channels(grad_out, c)?;
        ToyDetector::backward(
            self,
            &DetectorOutput {
                loc_logits: loc,
                reg_raw: reg,
            },
        )
    }

    fn visit<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(Slot<'a, T>)) {
        if prefix.is_empty() {
            ToyDetector::visit(self, f);
        } else {
            ToyDetector::visit(self, &mut |slot| {
                f(match slot {
                    Slot::Param(n, p) => Slot::Param(format!("{prefix}{n}"), p),
                    Slot::Buffer(n, b) => Slot::Buffer(format!("{prefix}{n}"), b),
                })
            });
        }
    }

    fn describe(&self, _prefix: &str, input: (usize, usize, usize), out: &mut Vec<LayerDesc>) -> (usize, usize, usize) {
        out.extend(ToyDetector::describe(self, input.1, input.2));
        (self.config.num_classes + 4, input.1 / STRIDE, input.2 / STRIDE)
    }
}

fn upsample_desc(name: &str, s: (usize, usize, usize)) -> LayerDesc {
    LayerDesc {
        name: name.into(),
        kind: LayerKind::Other,
        out_channels: s.0,
        out_hw: Some((s.1, s.2)),
    }
}

fn add_desc(name: &str, s: (usize, usize, usize)) -> LayerDesc {
    LayerDesc {
        name: name.into(),
        kind: LayerKind::Add,
        out_channels: s.0,
        out_hw: Some((s.1, s.2)),
    }
}

fn concat_channels<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, ca, h, w) = dims4(a)?;
    let cb = b.dim(1);
    b.ensure_shape("concat", &[n, cb, h, w])?;
    let (sa, sb) = (ca * h * w, cb * h * w);
    let mut data = Vec::with_capacity(n * (sa + sb));
    for i in 0..n {
        data.extend_from_slice(&a.data()[i * sa..(i + 1) * sa]);
        data.extend_from_slice(&b.data()[i * sb..(i + 1) * sb]);
    }
    Tensor::from_vec(&[n, ca + cb, h, w], data)
}

fn split_channels<T: Real>(x: &Tensor<T>, first: usize) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = dims4(x)?;
    if first > c {
        return Err(Error::InvalidArgument(format!("cannot split {c} channels at {first}")));
    }
    let (sa, sb) = (first * h * w, (c - first) * h * w);
    let (mut a, mut b) = (Vec::with_capacity(n * sa), Vec::with_capacity(n * sb));
    for chunk in x.data().chunks(sa + sb) {
        a.extend_from_slice(&chunk[..sa]);
        b.extend_from_slice(&chunk[sa..]);
    }
    Ok((Tensor::from_vec(&[n, first, h, w], a)?, Tensor::from_vec(&[n, c - first, h, w], b)?))
}

fn dims4<T: Real>(x: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    match *x.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::ShapeMismatch {
            op: "dims4",
            expected: vec![0, 0, 0, 0],
            actual: x.shape().to_vec(),
        }),
    }
}

/// Sigmoid clamped to `[PROB_EPS, 1 − PROB_EPS]`.
pub fn sigmoid_probs<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let (lo, hi) = (T::lit(PROB_EPS), T::lit(1.0 - PROB_EPS));
    logits.map(|x| (T::one() / (T::one() + (-x).exp())).max(lo).min(hi))
}

/// Chain rule through [`sigmoid_probs`]; zero where the clamp is active.
pub fn sigmoid_backward<T: Real>(grad_probs: &Tensor<T>, probs: &Tensor<T>) -> Result<Tensor<T>> {
    probs.ensure_shape("sigmoid_backward", grad_probs.shape())?;
    let (lo, hi) = (T::lit(PROB_EPS), T::lit(1.0 - PROB_EPS));
    let data = grad_probs
        .data()
        .iter()
        .zip(probs.data())
        .map(|(&g, &p)| if p <= lo || p >= hi { T::zero() } else { g * p * (T::one() - p) })
        .collect();
    Tensor::from_vec(grad_probs.shape(), data)
}

/// `scale · exp(clamp(raw, ±REG_RAW_LIMIT))`.
pub fn reg_distances<T: Real>(raw: &Tensor<T>, scale: f64) -> Tensor<T> {
    let (s, lim) = (T::lit(scale), T::lit(REG_RAW_LIMIT));
    raw.map(|r| s * r.max(-lim).min(lim).exp())
}

/// Chain rule through [`reg_distances`]; zero where the clamp is active.
pub fn reg_distances_backward<T: Real>(grad_dist: &Tensor<T>, raw: &Tensor<T>, dist: &Tensor<T>) -> Result<Tensor<T>> {
    raw.ensure_shape("reg_distances_backward", grad_dist.shape())?;
    dist.ensure_shape("reg_distances_backward", grad_dist.shape())?;
    let lim = T::lit(REG_RAW_LIMIT);
    let data = grad_dist
        .data()
        .iter()
        .zip(raw.data())
        .zip(dist.data())
        .map(|((&g, &r), &d)| if r.abs() > lim { T::zero() } else { g * d })
        .collect();
    Tensor::from_vec(grad_dist.shape(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(classes: usize) -> ToyDetector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        ToyDetector::new(
            ModelConfig {
                num_classes: classes,
                ..ModelConfig::default()
            },
            &mut rng,
        )
        .unwrap()
    }

    #[test]
    fn output_shapes_follow_stride_four() {
        let mut m = model(2);
        for (h, w) in [(32, 32), (48, 64)] {
            let x = Tensor::full(&[2, 3, h, w], 0.1);
            let out = m.forward(&x, Mode::Train).unwrap();
            assert_eq!(out.loc_logits.shape(), &[2, 2, h / 4, w / 4]);
            assert_eq!(out.reg_raw.shape(), &[2, 4, h / 4, w / 4]);
        }
    }

    #[test]
    fn rejects_indivisible_input() {
        let mut m = model(1);
        assert!(m.forward(&Tensor::zeros(&[2, 3, 40, 32]), Mode::Train).is_err());
    }

    #[test]
    fn defaults_and_structure() {
        let m = model(1);
        assert_eq!(m.head_width(), 48);
        assert_eq!(m.lite_kernel_sizes(), [5, 1, 1, 5]);
        let desc = m.describe(32, 32);
        assert!(desc.iter().all(|d| d.out_hw.is_some()));
        let last = desc.last().unwrap();
        assert_eq!(last.out_channels, 4);
        assert_eq!(last.out_hw, Some((8, 8)));
    }

    #[test]
    fn names_are_unique() {
        let mut m = model(1);
        let mut names = Vec::new();
        m.visit(&mut |s| names.push(s.name().to_string()));
        let n = names.len();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), n);
    }

    #[test]
    fn split_inverts_concat() {
        let a = Tensor::<f64>::from_fn(&[2, 3, 2, 2], |i| i as f64);
        let b = Tensor::from_fn(&[2, 4, 2, 2], |i| -(i as f64));
        let c = concat_channels(&a, &b).unwrap();
        let (a2, b2) = split_channels(&c, 3).unwrap();
        assert_eq!((a2, b2), (a, b));
    }

    #[test]
    fn positivity_transform() {
        let raw = Tensor::from_vec(&[3], vec![0.0f64, 20.0, -1.0]).unwrap();
        let d = reg_distances(&raw, 16.0);
        assert_eq!(d.data()[0], 16.0);
        assert_eq!(d.data()[1], 16.0 * 10f64.exp());
        assert!(d.data().iter().all(|&v| v > 0.0));
    }
}
