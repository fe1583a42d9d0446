use std::path::Path;

use image::{GrayImage, ImageFormat, Luma, Rgb, RgbImage};

use crate::augment::TrainSample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGENET_MEAN: [f64; 3] = [0.485, 0.456, 0.406];
pub const IMAGENET_STD: [f64; 3] = [0.229, 0.224, 0.225];

fn image_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("png") => Ok(ImageFormat::Png),
        Some("ppm" | "pnm") => Ok(ImageFormat::Pnm),
        _ => Err(image_err(path, "unsupported image format (expected .png or .ppm)")),
    }
}

/// Reads an 8-bit RGB PNG or PPM into a `3 × H × W` tensor in `[0, 1]`.
pub fn read_image(path: &Path) -> Result<Tensor<f32>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let format = format_for(path)?;
    let img = image::load_from_memory_with_format(&bytes, format).map_err(|e| image_err(path, e))?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut t = Tensor::zeros(&[3, h, w]);
    let d = t.data_mut();
    for (x, y, px) in rgb.enumerate_pixels() {
        for c in 0..3 {
            d[(c * h + y as usize) * w + x as usize] = px[c] as f32 / 255.0;
        }
    }
    Ok(t)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn image_dims(image: &Tensor<f32>) -> Result<(usize, usize)> {
    match *image.shape() {
        [3, h, w] => Ok((h, w)),
        _ => Err(Error::ShapeMismatch {
            op: "image",
            expected: vec![3, 0, 0],
            actual: image.shape().to_vec(),
        }),
    }
}

/// Writes a `3 × H × W` tensor as an 8-bit PNG or PPM, chosen by extension.
pub fn write_image(image: &Tensor<f32>, path: &Path) -> Result<()> {
    let (h, w) = image_dims(image)?;
    let format = format_for(path)?;
    let d = image.data();
    let rgb = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let at = |c: usize| to_u8(d[(c * h + y as usize) * w + x as usize]);
        Rgb([at(0), at(1), at(2)])
    });
    rgb.save_with_format(path, format).map_err(|e| image_err(path, e))
}

/// Writes an `H × W` map in `[0, 1]` as a grayscale PNG.
pub fn write_gray_png(map: &Tensor<f32>, path: &Path) -> Result<()> {
    let (h, w) = match *map.shape() {
        [h, w] => (h, w),
        _ => {
            return Err(Error::ShapeMismatch {
                op: "write_gray_png",
                expected: vec![0, 0],
                actual: map.shape().to_vec(),
            })
        }
    };
    let d = map.data();
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| Luma([to_u8(d[y as usize * w + x as usize])]));
    img.save_with_format(path, ImageFormat::Png).map_err(|e| image_err(path, e))
}

fn check_std(std: &[f64; 3]) -> Result<()> {
    if std.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::InvalidArgument(format!("normalization std must be positive, got {std:?}")));
    }
    Ok(())
}

/// `(x − mean) / std` per channel.
pub fn normalize(image: &Tensor<f32>, mean: &[f64; 3], std: &[f64; 3]) -> Result<Tensor<f32>> {
    check_std(std)?;
    let (h, w) = image_dims(image)?;
    let mut out = image.clone();
    for (c, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
        let (m, s) = (mean[c], std[c]);
        for v in plane {
            *v = ((*v as f64 - m) / s) as f32;
        }
    }
    Ok(out)
}

/// Inverse of [`normalize`].
pub fn denormalize(image: &Tensor<f32>, mean: &[f64; 3], std: &[f64; 3]) -> Result<Tensor<f32>> {
    check_std(std)?;
    let (h, w) = image_dims(image)?;
    let mut out = image.clone();
    for (c, plane) in out.data_mut().chunks_mut(h * w).enumerate() {
        let (m, s) = (mean[c], std[c]);
        for v in plane {
            *v = (*v as f64 * s + m) as f32;
        }
    }
    Ok(out)
}

/// Half-pixel-centered bilinear sampling positions along one axis.
fn taps(out: usize, input: usize) -> Vec<(usize, usize, f32)> {
    let scale = input as f64 / out as f64;
    (0..out)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let lo = src.floor() as usize;
            let hi = (lo + 1).min(input - 1);
            (lo, hi, (src - lo as f64) as f32)
        })
        .collect()
}

/// Bilinear resize of the image; boxes scale by `(out_w / W, out_h / H)`.
pub fn resize_bilinear(sample: &TrainSample, out_h: usize, out_w: usize) -> Result<TrainSample> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::InvalidArgument("resize target must be at least 1×1".into()));
    }
    let (h, w) = image_dims(&sample.image)?;
    if (h, w) == (out_h, out_w) {
        return Ok(sample.clone());
    }
    let (ty, tx) = (taps(out_h, h), taps(out_w, w));
    let src = sample.image.data();
    let mut out = Tensor::zeros(&[3, out_h, out_w]);
    for (c, plane) in out.data_mut().chunks_mut(out_h * out_w).enumerate() {
        let base = &src[c * h * w..(c + 1) * h * w];
        for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                let lerp = |a: f32, b: f32, t: f32| a + t * (b - a);
                let top = lerp(base[y0 * w + x0], base[y0 * w + x1], fx);
                let bottom = lerp(base[y1 * w + x0], base[y1 * w + x1], fx);
                plane[oy * out_w + ox] = lerp(top, bottom, fy).clamp(0.0, 1.0);
            }
        }
    }
    let (sx, sy) = (out_w as f64 / w as f64, out_h as f64 / h as f64);
    let boxes = sample
        .boxes
        .iter()
        .map(|b| {
            let scaled = crate::geometry::BBox::new(b.x_min * sx, b.y_min * sy, b.x_max * sx, b.y_max * sy);
            scaled.clip(out_w as f64, out_h as f64)
        })
        .collect();
    Ok(TrainSample {
        image: out,
        boxes,
        classes: sample.classes.clone(),
        box_weights: sample.box_weights.clone(),
    })
}
