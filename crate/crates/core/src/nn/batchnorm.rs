use super::{Layer, LayerDesc, LayerKind, Mode, Param, Slot};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
struct BnCache<T> {
    mode: Mode,
    x_hat: Tensor<T>,
    inv_std: Vec<T>,
}

/// Per-channel batch normalization over `N × C × H × W`.
///
/// Running statistics follow `running = momentum * running + (1 - momentum) * batch`
/// with the biased batch variance.
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: 0.9,
            eps: 1e-5,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize, usize)> {
        match *x.shape() {
            [n, c, h, w] if c == self.channels() => Ok((n, c, h * w)),
            _ => Err(Error::ShapeMismatch {
                op: "batch_norm",
                expected: vec![0, self.channels(), 0, 0],
                actual: x.shape().to_vec(),
            }),
        }
    }
}

impl<T: Real> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (n, c, hw) = self.check_input(x)?;
        if mode == Mode::Train && n < 2 {
            return Err(Error::BatchTooSmall(n));
        }
        let eps = T::lit(self.eps);
        let m = T::lit((n * hw) as f64);
        let src = x.data();
        let mut stats = Vec::with_capacity(c);
        for ch in 0..c {
            let (mean, var) = match mode {
                Mode::Train => {
                    let mut sum = T::zero();
                    for i in 0..n {
                        sum += src[(i * c + ch) * hw..(i * c + ch + 1) * hw].iter().copied().sum::<T>();
                    }
                    let mean = sum / m;
                    let mut sq = T::zero();
                    for i in 0..n {
                        for &v in &src[(i * c + ch) * hw..(i * c + ch + 1) * hw] {
                            sq += (v - mean) * (v - mean);
                        }
                    }
                    (mean, sq / m)
                }
                Mode::Eval => (self.running_mean.data()[ch], self.running_var.data()[ch]),
            };
            stats.push((mean, var));
        }
        if mode == Mode::Train {
            let mom = T::lit(self.momentum);
            let rest = T::one() - mom;
            for (ch, &(mean, var)) in stats.iter().enumerate() {
                let rm = &mut self.running_mean.data_mut()[ch];
                *rm = mom * *rm + rest * mean;
                let rv = &mut self.running_var.data_mut()[ch];
                *rv = mom * *rv + rest * var;
            }
        }
        let inv_std: Vec<T> = stats.iter().map(|&(_, v)| T::one() / (v + eps).sqrt()).collect();
        let mut x_hat = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        {
            let xh = x_hat.data_mut();
            let y = out.data_mut();
            let (gamma, beta) = (self.gamma.value.data(), self.beta.value.data());
            for i in 0..n {
                for ch in 0..c {
                    let range = (i * c + ch) * hw..(i * c + ch + 1) * hw;
                    let (mean, is) = (stats[ch].0, inv_std[ch]);
                    for k in range {
                        let v = (src[k] - mean) * is;
                        xh[k] = v;
                        y[k] = gamma[ch] * v + beta[ch];
                    }
                }
            }
        }
        self.cache = Some(BnCache { mode, x_hat, inv_std });
        Ok(out)
    }

    fn backward(&mut self, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("batch_norm backward before forward".into()))?;
        grad_out.ensure_shape("batch_norm backward", cache.x_hat.shape())?;
        let (n, c, hw) = self.check_input(grad_out)?;
        let m = T::lit((n * hw) as f64);
        let dy = grad_out.data();
        let xh = cache.x_hat.data();
        let mut dx = Tensor::zeros(grad_out.shape());
        let gamma = self.gamma.value.data().to_vec();
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xh = T::zero();
            for i in 0..n {
                for k in (i * c + ch) * hw..(i * c + ch + 1) * hw {
                    sum_dy += dy[k];
                    sum_dy_xh += dy[k] * xh[k];
                }
            }
            self.gamma.grad.data_mut()[ch] += sum_dy_xh;
            self.beta.grad.data_mut()[ch] += sum_dy;
            let is = cache.inv_std[ch];
            let g = gamma[ch];
            let d = dx.data_mut();
            for i in 0..n {
                for k in (i * c + ch) * hw..(i * c + ch + 1) * hw {
                    d[k] = match cache.mode {
                        Mode::Train => g * is / m * (m * dy[k] - sum_dy - xh[k] * sum_dy_xh),
                        Mode::Eval => g * is * dy[k],
                    };
                }
            }
        }
        Ok(dx)
    }

    fn visit<'a>(&'a mut self, prefix: &str, f: &mut dyn FnMut(Slot<'a, T>)) {
        f(Slot::Param(format!("{prefix}gamma"), &mut self.gamma));
        f(Slot::Param(format!("{prefix}beta"), &mut self.beta));
        f(Slot::Buffer(format!("{prefix}running_mean"), &mut self.running_mean));
        f(Slot::Buffer(format!("{prefix}running_var"), &mut self.running_var));
    }

    fn describe(&self, prefix: &str, input: (usize, usize, usize), out: &mut Vec<LayerDesc>) -> (usize, usize, usize) {
        out.push(LayerDesc {
            name: prefix.trim_end_matches('.').to_string(),
            kind: LayerKind::BatchNorm,
            out_channels: input.0,
            out_hw: Some((input.1, input.2)),
        });
        input
    }
}
