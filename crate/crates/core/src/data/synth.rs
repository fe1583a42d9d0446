use rand::Rng;

use crate::augment::TrainSample;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::rng::keyed_stream;
use crate::tensor::Tensor;

const STREAM_SYNTH: u32 = 1;
const BACKGROUND: f32 = 0.45;
const NOISE: f32 = 0.05;
const PLACEMENT_ATTEMPTS: usize = 200;

const PALETTE: [[u8; 3]; 8] = [
    [230, 25, 25],
    [25, 205, 50],
    [40, 65, 230],
    [240, 215, 25],
    [220, 40, 220],
    [30, 215, 220],
    [245, 130, 20],
    [250, 250, 250],
];

/// Fill color of a class, on the 1/255 grid.
pub fn class_color(class_id: usize) -> [f32; 3] {
    let rgb = if class_id < PALETTE.len() {
        PALETTE[class_id]
    } else {
        // golden-angle hue walk for larger class counts
        let hue = (class_id as f64 * 137.507_764) % 360.0;
        let sector = hue / 60.0;
        let x = 1.0 - (sector % 2.0 - 1.0).abs();
        let (r, g, b) = match sector as u32 {
            0 => (1.0, x, 0.0),
            1 => (x, 1.0, 0.0),
            2 => (0.0, 1.0, x),
            3 => (0.0, x, 1.0),
            4 => (x, 0.0, 1.0),
            _ => (1.0, 0.0, x),
        };
        let q = |v: f64| (40.0 + 200.0 * v).round() as u8;
        [q(r), q(g), q(b)]
    };
    rgb.map(|v| v as f32 / 255.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthSpec {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub min_objects: usize,
    pub max_objects: usize,
    /// Box side limits as fractions of the shorter image side.
    pub min_side: f64,
    pub max_side: f64,
}

impl SynthSpec {
    pub fn new(height: usize, width: usize, num_classes: usize) -> Self {
        SynthSpec {
            height,
            width,
            num_classes,
            min_objects: 1,
            max_objects: 4,
            min_side: 0.12,
            max_side: 0.4,
        }
    }
}

/// `n` images of low-amplitude noise with 1–4 non-overlapping filled
/// rectangles whose color encodes the class. Boxes use integer pixel
/// coordinates and enclose exactly the painted pixels.
pub fn synth_dataset(n: usize, spec: &SynthSpec, seed: u64) -> Result<Vec<TrainSample>> {
    if n == 0 {
        return Err(Error::InvalidArgument("synthetic dataset needs at least one image".into()));
    }
    if spec.num_classes == 0 || spec.height < 8 || spec.width < 8 {
        return Err(Error::InvalidArgument("synthetic images need C ≥ 1 and extents ≥ 8".into()));
    }
    if spec.min_objects == 0 || spec.min_objects > spec.max_objects {
        return Err(Error::InvalidArgument("synthetic object count range is empty".into()));
    }
    (0..n).map(|i| synth_image(spec, seed, i as u64)).collect()
}

fn synth_image(spec: &SynthSpec, seed: u64, index: u64) -> Result<TrainSample> {
    let mut rng = keyed_stream(seed, STREAM_SYNTH, index);
    let (h, w) = (spec.height, spec.width);
    let mut image = Tensor::from_fn(&[3, h, w], |_| {
        let v = BACKGROUND + rng.random_range(-NOISE..NOISE);
        (v * 255.0).round() / 255.0
    });
    let short = h.min(w) as f64;
    let lo = ((spec.min_side * short).round() as usize).max(2);
    let hi = ((spec.max_side * short).round() as usize).clamp(lo, h.min(w));
    let count = rng.random_range(spec.min_objects..=spec.max_objects);
    let mut boxes: Vec<BBox> = Vec::new();
    let mut classes = Vec::new();
    for _ in 0..PLACEMENT_ATTEMPTS {
        if boxes.len() == count {
            break;
        }
        let bw = rng.random_range(lo..=hi);
        let bh = rng.random_range(lo..=hi);
        let x0 = rng.random_range(0..=w - bw);
        let y0 = rng.random_range(0..=h - bh);
        let candidate = BBox::new(x0 as f64, y0 as f64, (x0 + bw) as f64, (y0 + bh) as f64);
        // keep a one-pixel gap so painted regions never touch
        let grown = BBox::new(candidate.x_min - 1.0, candidate.y_min - 1.0, candidate.x_max + 1.0, candidate.y_max + 1.0);
        if boxes.iter().any(|b| b.intersect(&grown).is_some()) {
            continue;
        }
        let class_id = rng.random_range(0..spec.num_classes);
        let color = class_color(class_id);
        let d = image.data_mut();
        for (c, &v) in color.iter().enumerate() {
            for y in y0..y0 + bh {
                d[(c * h + y) * w + x0..(c * h + y) * w + x0 + bw].fill(v);
            }
        }
        boxes.push(candidate);
        classes.push(class_id);
    }
    TrainSample::new(image, boxes, classes)
}
