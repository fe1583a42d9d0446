use super::{Layer, Mode, Slot};
use crate::error::Result;
use crate::tensor::Tensor;

pub const DEFAULT_STEP: f64 = 1e-5;

/// `|a − b| / max(|a|, |b|, 1e−8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Maximum relative error between `analytic` and central differences of
/// the scalar function `f` around `x`.
pub fn grad_check<F: FnMut(&Tensor<f64>) -> f64>(f: F, x: &Tensor<f64>, analytic: &Tensor<f64>) -> f64 {
    grad_check_with_step(f, x, analytic, DEFAULT_STEP)
}

pub fn grad_check_with_step<F: FnMut(&Tensor<f64>) -> f64>(
    mut f: F,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    step: f64,
) -> f64 {
    assert_eq!(x.shape(), analytic.shape(), "gradient shape must match input");
    let mut probe = x.clone();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let up = f(&probe);
        probe.data_mut()[i] = orig - step;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        let cd = (up - down) / (2.0 * step);
        worst = worst.max(relative_error(analytic.data()[i], cd));
    }
    worst
}

/// Relative disagreement between central differences at `h` and `h / 2`
/// above which the probe interval is taken to straddle a kink.
pub const KINK_TOL: f64 = 1e-4;

/// Worst relative errors of a layer's backward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayerCheck {
    pub input: f64,
    pub params: f64,
    /// Coordinates re-probed at a smaller step because a ReLU switched
    /// inside the default probe interval.
    pub kinked: usize,
    pub coordinates: usize,
}

impl LayerCheck {
    pub fn worst(&self) -> f64 {
        self.input.max(self.params)
    }
}

/// Like [`grad_check`] for piecewise-smooth `f`. While the differences at
/// step `h` and `h / 2` disagree by more than [`KINK_TOL`], the probe
/// interval straddles a kink and `h` shrinks tenfold (down to
/// `DEFAULT_STEP / 100`). Returns the worst error and the number of
/// re-probed coordinates.
pub fn grad_check_piecewise<F: FnMut(&Tensor<f64>) -> f64>(
    mut f: F,
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
) -> (f64, usize) {
    assert_eq!(x.shape(), analytic.shape(), "gradient shape must match input");
    let mut probe = x.clone();
    let mut central = |probe: &mut Tensor<f64>, i: usize, h: f64| {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let up = f(probe);
        probe.data_mut()[i] = orig - h;
        let down = f(probe);
        probe.data_mut()[i] = orig;
        (up - down) / (2.0 * h)
    };
    let (mut worst, mut kinked) = (0.0f64, 0);
    for i in 0..x.len() {
        let mut h = DEFAULT_STEP;
        let mut cd = central(&mut probe, i, h);
        if relative_error(cd, central(&mut probe, i, h / 2.0)) > KINK_TOL {
            kinked += 1;
            while h > DEFAULT_STEP / 100.0 {
                h /= 10.0;
                cd = central(&mut probe, i, h);
                if relative_error(cd, central(&mut probe, i, h / 2.0)) <= KINK_TOL {
                    break;
                }
            }
        }
        worst = worst.max(relative_error(analytic.data()[i], cd));
    }
    (worst, kinked)
}

/// Checks input and parameter gradients of `layer` at `x` against central
/// differences of `sum(probe * layer(x))`. `probe` must have the output shape.
pub fn check_layer<L: Layer<f64> + Clone>(
    layer: &L,
    x: &Tensor<f64>,
    probe: &Tensor<f64>,
    mode: Mode,
) -> Result<LayerCheck> {
    let project = |y: &Tensor<f64>| compensated_dot(y.data(), probe.data());
    let mut l = layer.clone();
    l.zero_grad();
    let y = l.forward(x, mode)?;
    probe.ensure_shape("check_layer probe", y.shape())?;
    let grad_x = l.backward(probe)?;
    let mut analytic = Vec::new();
    l.visit("", &mut |slot| {
        if let Slot::Param(_, p) = slot {
            analytic.push(p.grad.clone());
        }
    });

    let (input, mut kinked) = grad_check_piecewise(
        |t| project(&layer.clone().forward(t, mode).expect("shape checked above")),
        x,
        &grad_x,
    );
    let mut params = 0.0f64;
    let mut coordinates = x.len();
    for (k, grad) in analytic.iter().enumerate() {
        let value = nth_param(&mut layer.clone(), k);
        let (err, kinks) = grad_check_piecewise(
            |t| {
                let mut probe_layer = layer.clone();
                set_nth_param(&mut probe_layer, k, t);
                project(&probe_layer.forward(x, mode).expect("shape checked above"))
            },
            &value,
            grad,
        );
        params = params.max(err);
        kinked += kinks;
        coordinates += value.len();
    }
    Ok(LayerCheck {
        input,
        params,
        kinked,
        coordinates,
    })
}

/// Neumaier-compensated dot product, so that summation roundoff does not
/// swamp small finite differences.
fn compensated_dot(a: &[f64], b: &[f64]) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for (x, y) in a.iter().zip(b) {
        let v = x * y;
        let t = sum + v;
        comp += if sum.abs() >= v.abs() { (sum - t) + v } else { (v - t) + sum };
        sum = t;
    }
    sum + comp
}

fn nth_param<L: Layer<f64>>(layer: &mut L, k: usize) -> Tensor<f64> {
    let mut i = 0;
    let mut out = None;
    layer.visit("", &mut |slot| {
        if let Slot::Param(_, p) = slot {
            if i == k {
                out = Some(p.value.clone());
            }
            i += 1;
        }
    });
    out.expect("parameter index in range")
}

fn set_nth_param<L: Layer<f64>>(layer: &mut L, k: usize, value: &Tensor<f64>) {
    let mut i = 0;
    layer.visit("", &mut |slot| {
        if let Slot::Param(_, p) = slot {
            if i == k {
                p.value = value.clone();
            }
            i += 1;
        }
    });
}
