//! Stateless forward/backward kernels on `N × C × H × W` tensors.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub const fn new(stride: usize, padding: usize, groups: usize) -> Self {
        ConvSpec {
            stride,
            padding,
            groups,
        }
    }
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec::new(1, 0, 1)
    }
}

/// `floor((n + 2p - k) / s) + 1`, or `None` when the kernel does not fit.
pub fn conv_output_extent(n: usize, k: usize, stride: usize, padding: usize) -> Option<usize> {
    (n + 2 * padding).checked_sub(k).map(|v| v / stride + 1)
}

fn dims4<T: Real>(t: &Tensor<T>, op: &'static str) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        _ => Err(Error::ShapeMismatch {
            op,
            expected: vec![0, 0, 0, 0],
            actual: t.shape().to_vec(),
        }),
    }
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    cin_g: usize,
    cout_g: usize,
}

fn conv_geometry<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, spec: &ConvSpec) -> Result<Geometry> {
    let [n, cin, h, w] = dims4(x, "conv2d")?;
    let [cout, cin_g, kh, kw] = dims4(weight, "conv2d")?;
    let g = spec.groups;
    if g == 0 || spec.stride == 0 || cin % g != 0 || cout % g != 0 || cin / g != cin_g {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            expected: vec![cout, cin / g.max(1), kh, kw],
            actual: weight.shape().to_vec(),
        });
    }
    let oh = conv_output_extent(h, kh, spec.stride, spec.padding);
    let ow = conv_output_extent(w, kw, spec.stride, spec.padding);
    let (Some(oh), Some(ow)) = (oh, ow) else {
        return Err(Error::InvalidArgument(format!(
            "kernel {kh}x{kw} does not fit input {h}x{w} with padding {}",
            spec.padding
        )));
    };
    Ok(Geometry {
        n,
        cin,
        h,
        w,
        cout,
        kh,
        kw,
        oh,
        ow,
        cin_g,
        cout_g: cout / g,
    })
}

/// Unfolds channels `[c0, c0 + cin_g)` of one image into a
/// `(cin_g·kh·kw) × (oh·ow)` matrix.
fn im2col<T: Real>(img: &[T], g: &Geometry, spec: &ConvSpec, c0: usize, cols: &mut [T]) {
    let p = g.oh * g.ow;
    let pad = spec.padding as isize;
    for c in 0..g.cin_g {
        let plane = &img[(c0 + c) * g.h * g.w..(c0 + c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * spec.stride + ky) as isize - pad;
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for (ox, d) in out_row.iter_mut().enumerate() {
                        let ix = (ox * spec.stride + kx) as isize - pad;
                        *d = if ix < 0 || ix >= g.w as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Folds a column-matrix gradient back onto channels `[c0, c0 + cin_g)`.
fn col2im<T: Real>(cols: &[T], g: &Geometry, spec: &ConvSpec, c0: usize, img: &mut [T]) {
    let p = g.oh * g.ow;
    let pad = spec.padding as isize;
    for c in 0..g.cin_g {
        let plane = &mut img[(c0 + c) * g.h * g.w..(c0 + c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..g.oh {
                    let iy = (oy * spec.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.ow {
                        let ix = (ox * spec.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[k×n]`
fn gemm_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            if aip == T::zero() {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += aip * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
fn gemm_abt_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            let mut acc = T::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc += av * bv;
            }
            c[i * n + j] += acc;
        }
    }
}

/// `c[m×n] += a[k×m]ᵀ · b[k×n]`
fn gemm_atb_acc<T: Real>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let api = a[p * m + i];
            if api == T::zero() {
                continue;
            }
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += api * bv;
            }
        }
    }
}

/// Grouped 2-D cross-correlation. `weight` is `Cout × Cin/groups × kh × kw`;
/// depthwise convolution is `groups = Cin`.
pub fn conv2d_forward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let g = conv_geometry(x, weight, spec)?;
    if let Some(b) = bias {
        b.ensure_shape("conv2d bias", &[g.cout])?;
    }
    let p = g.oh * g.ow;
    let k = g.cin_g * g.kh * g.kw;
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * p;
    let mut out = vec![T::zero(); g.n * out_len];
    let wdata = weight.data();
    out.par_chunks_mut(out_len.max(1))
        .enumerate()
        .for_each(|(n, dst)| {
            let img = &x.data()[n * in_len..(n + 1) * in_len];
            let mut cols = vec![T::zero(); k * p];
            for grp in 0..spec.groups {
                im2col(img, &g, spec, grp * g.cin_g, &mut cols);
                let wg = &wdata[grp * g.cout_g * k..(grp + 1) * g.cout_g * k];
                let og = &mut dst[grp * g.cout_g * p..(grp + 1) * g.cout_g * p];
                gemm_acc(wg, &cols, og, g.cout_g, k, p);
            }
            if let Some(b) = bias {
                for (co, &bv) in b.data().iter().enumerate() {
                    dst[co * p..(co + 1) * p].iter_mut().for_each(|v| *v += bv);
                }
            }
        });
    Tensor::from_vec(&[g.n, g.cout, g.oh, g.ow], out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvGrads<T> {
    pub grad_x: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
}

/// Exact gradients of [`conv2d_forward`]. Per-image partial weight
/// gradients are reduced in image order, so results do not depend on the
/// thread count.
pub fn conv2d_backward<T: Real>(
    grad_out: &Tensor<T>,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
) -> Result<ConvGrads<T>> {
    let g = conv_geometry(x, weight, spec)?;
    grad_out.ensure_shape("conv2d_backward", &[g.n, g.cout, g.oh, g.ow])?;
    let p = g.oh * g.ow;
    let k = g.cin_g * g.kh * g.kw;
    let in_len = g.cin * g.h * g.w;
    let out_len = g.cout * p;
    let wdata = weight.data();

    let partials: Vec<(Vec<T>, Vec<T>, Vec<T>)> = (0..g.n)
        .into_par_iter()
        .map(|n| {
            let img = &x.data()[n * in_len..(n + 1) * in_len];
            let go = &grad_out.data()[n * out_len..(n + 1) * out_len];
            let mut gx = vec![T::zero(); in_len];
            let mut gw = vec![T::zero(); weight.len()];
            let mut cols = vec![T::zero(); k * p];
            let mut gcols = vec![T::zero(); k * p];
            for grp in 0..spec.groups {
                im2col(img, &g, spec, grp * g.cin_g, &mut cols);
                let gog = &go[grp * g.cout_g * p..(grp + 1) * g.cout_g * p];
                gemm_abt_acc(gog, &cols, &mut gw[grp * g.cout_g * k..(grp + 1) * g.cout_g * k], g.cout_g, p, k);
                gcols.fill(T::zero());
                let wg = &wdata[grp * g.cout_g * k..(grp + 1) * g.cout_g * k];
                gemm_atb_acc(wg, gog, &mut gcols, k, g.cout_g, p);
                col2im(&gcols, &g, spec, grp * g.cin_g, &mut gx);
            }
            let gb: Vec<T> = (0..g.cout).map(|co| go[co * p..(co + 1) * p].iter().copied().sum()).collect();
            (gx, gw, gb)
        })
        .collect();

    let mut grad_x = Vec::with_capacity(g.n * in_len);
    let mut grad_weight = vec![T::zero(); weight.len()];
    let mut grad_bias = vec![T::zero(); g.cout];
    for (gx, gw, gb) in partials {
        grad_x.extend_from_slice(&gx);
        grad_weight.iter_mut().zip(&gw).for_each(|(a, &b)| *a += b);
        grad_bias.iter_mut().zip(&gb).for_each(|(a, &b)| *a += b);
    }
    Ok(ConvGrads {
        grad_x: Tensor::from_vec(x.shape(), grad_x)?,
        grad_weight: Tensor::from_vec(weight.shape(), grad_weight)?,
        grad_bias: Tensor::from_vec(&[g.cout], grad_bias)?,
    })
}

pub fn relu_forward<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient of ReLU given the forward *output*.
pub fn relu_backward<T: Real>(grad_out: &Tensor<T>, output: &Tensor<T>) -> Result<Tensor<T>> {
    output.ensure_shape("relu_backward", grad_out.shape())?;
    let data = grad_out
        .data()
        .iter()
        .zip(output.data())
        .map(|(&g, &y)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(grad_out.shape(), data)
}

/// Nearest-neighbor upsampling by an integer `factor ≥ 2`.
pub fn upsample_nearest<T: Real>(x: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    if factor < 2 {
        return Err(Error::InvalidArgument(format!("upsample factor must be >= 2, got {factor}")));
    }
    let [n, c, h, w] = dims4(x, "upsample_nearest")?;
    let (oh, ow) = (h * factor, w * factor);
    let src = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            let row = &s[(oy / factor) * w..(oy / factor + 1) * w];
            out.extend((0..ow).map(|ox| row[ox / factor]));
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

/// Sums each `factor × factor` replication block.
pub fn upsample_nearest_backward<T: Real>(grad_out: &Tensor<T>, factor: usize) -> Result<Tensor<T>> {
    let [n, c, oh, ow] = dims4(grad_out, "upsample_nearest_backward")?;
    if factor < 2 || oh % factor != 0 || ow % factor != 0 {
        return Err(Error::InvalidArgument(format!(
            "cannot fold {oh}x{ow} by factor {factor}"
        )));
    }
    let (h, w) = (oh / factor, ow / factor);
    let src = grad_out.data();
    let mut out = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let s = &src[plane * oh * ow..(plane + 1) * oh * ow];
        let d = &mut out[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                d[(oy / factor) * w + ox / factor] += s[oy * ow + ox];
            }
        }
    }
    Tensor::from_vec(&[n, c, h, w], out)
}

pub fn shortcut_add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let mut out = a.clone();
    out.add_assign(b)?;
    Ok(out)
}

/// 2×2 average pooling with stride 2; spatial extents must be even.
pub fn avg_pool2x2<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, h, w] = dims4(x, "avg_pool2x2")?;
    if h % 2 != 0 || w % 2 != 0 {
        return Err(Error::InvalidArgument(format!("avg_pool2x2 needs even extents, got {h}x{w}")));
    }
    let (oh, ow) = (h / 2, w / 2);
    let quarter = T::lit(0.25);
    let src = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let s = &src[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let (y, x) = (2 * oy, 2 * ox);
                let sum = s[y * w + x] + s[y * w + x + 1] + s[(y + 1) * w + x] + s[(y + 1) * w + x + 1];
                out.push(sum * quarter);
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

pub fn avg_pool2x2_backward<T: Real>(grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, oh, ow] = dims4(grad_out, "avg_pool2x2_backward")?;
    let (h, w) = (oh * 2, ow * 2);
    let quarter = T::lit(0.25);
    let src = grad_out.data();
    let mut out = vec![T::zero(); n * c * h * w];
    for plane in 0..n * c {
        let s = &src[plane * oh * ow..(plane + 1) * oh * ow];
        let d = &mut out[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            for x in 0..w {
                d[y * w + x] = s[(y / 2) * ow + x / 2] * quarter;
            }
        }
    }
    Tensor::from_vec(&[n, c, h, w], out)
}
