//! `augment`: writes augmented samples as PNG plus a COCO annotation file.

use std::path::PathBuf;

use afdet_core::augment::{
    apply_gridmask, augment_sample, cutmix, mixup, random_crop, random_expand, sample_lambda, MixMode, TrainSample,
};
use afdet_core::data::{coco_to_json, resize_bilinear, write_image, CocoAnnotation, CocoCategory, CocoFile, CocoImage};
use afdet_core::rng::keyed_stream;
use afdet_core::train::load_dataset;
use afdet_core::RunConfig;
use clap::ValueEnum;
use serde::Serialize;

use crate::error::{CliError, Result};
use crate::fsutil::{ensure_dir, write_text, write_via_temp};

pub const ANNOTATIONS_FILE: &str = "annotations.json";
/// Random stream purpose for previews, distinct from the trainer's.
const STREAM_PREVIEW: u32 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AugmentOp {
    /// The configured training pipeline (forced on).
    Pipeline,
    Cutmix,
    Mixup,
    /// Grid mask, always applied.
    Gridmask,
    Expand,
    Crop,
}

#[derive(Debug, Clone)]
pub struct AugmentOptions {
    pub op: AugmentOp,
    /// Fixed mixing weight; drawn from Beta(β, β) when absent.
    pub lambda: Option<f64>,
    /// Number of outputs; defaults to one per dataset image.
    pub count: Option<usize>,
}

#[derive(Debug, Clone, Serialize)]
pub struct AugmentReport {
    pub images: Vec<PathBuf>,
    pub annotations: PathBuf,
}

fn needs_partner(op: AugmentOp, cfg: &RunConfig) -> bool {
    match op {
        AugmentOp::Cutmix | AugmentOp::Mixup => true,
        AugmentOp::Pipeline => cfg.augment.mix.mode != MixMode::None && cfg.augment.mix.prob > 0.0,
        _ => false,
    }
}

/// Sample `i` of the preview. Mixing partners are the next dataset image.
fn preview(data: &[TrainSample], i: usize, cfg: &RunConfig, opts: &AugmentOptions) -> Result<TrainSample> {
    let (h, w) = (cfg.image_height, cfg.image_width);
    let idx = i % data.len();
    let mut rng = keyed_stream(cfg.seed, STREAM_PREVIEW, i as u64);
    let a = &data[idx];
    let partner = || resize_bilinear(&data[(idx + 1) % data.len()], h, w);
    let lam = |rng: &mut _| match opts.lambda {
        Some(l) => Ok(l),
        None => sample_lambda(cfg.augment.mix.beta, rng),
    };
    let aug = &cfg.augment;
    let s = match opts.op {
        AugmentOp::Pipeline => {
            let mut pipeline = *aug;
            pipeline.enabled = true;
            augment_sample(data, idx, &pipeline, h, w, &mut rng)?
        }
        AugmentOp::Cutmix => {
            let l = lam(&mut rng)?;
            cutmix(&resize_bilinear(a, h, w)?, &partner()?, l, &mut rng)?
        }
        AugmentOp::Mixup => {
            let l = lam(&mut rng)?;
            mixup(&resize_bilinear(a, h, w)?, &partner()?, l)?
        }
        AugmentOp::Gridmask => {
            let p = aug.gridmask.sample(h, w, &mut rng);
            apply_gridmask(&resize_bilinear(a, h, w)?, &p)
        }
        AugmentOp::Expand => {
            let e = random_expand(a, aug.expand.max_ratio, aug.expand.fill, &mut rng)?;
            resize_bilinear(&e, h, w)?
        }
        AugmentOp::Crop => {
            let c = random_crop(a, aug.crop.min_keep, aug.crop.min_scale, &mut rng)?;
            resize_bilinear(&c, h, w)?
        }
    };
    Ok(s)
}

pub fn cmd_augment(cfg: &RunConfig, opts: &AugmentOptions) -> Result<AugmentReport> {
    if let Some(l) = opts.lambda {
        if !(0.0..=1.0).contains(&l) {
            return Err(CliError::Usage(format!("--lambda {l} outside [0, 1]")));
        }
    }
    let data = load_dataset(cfg)?;
    if data.is_empty() {
        return Err(CliError::Usage("dataset is empty".into()));
    }
    if data.len() < 2 && needs_partner(opts.op, cfg) {
        let name = opts.op.to_possible_value().map(|v| v.get_name().to_string()).unwrap_or_default();
        return Err(CliError::Usage(format!(
            "{name} mixes two images but the dataset has a single input"
        )));
    }
    let out = &cfg.output_dir;
    ensure_dir(out)?;
    let count = opts.count.unwrap_or(data.len());
    let mut coco = CocoFile {
        categories: (0..cfg.model.num_classes)
            .map(|c| CocoCategory {
                id: c as u64 + 1,
                name: format!("class{c}"),
            })
            .collect(),
        ..Default::default()
    };
    let mut images = Vec::with_capacity(count);
    for i in 0..count {
        let s = preview(&data, i, cfg, opts)?;
        let file_name = format!("aug_{i:04}.png");
        let path = out.join(&file_name);
        write_via_temp(&path, |tmp| write_image(&s.image, tmp))?;
        let image_id = i as u64 + 1;
        coco.images.push(CocoImage {
            id: image_id,
            file_name,
            width: s.width() as u32,
            height: s.height() as u32,
        });
        for (b, &class_id) in s.boxes.iter().zip(&s.classes) {
            if !(b.width() > 0.0 && b.height() > 0.0) {
                continue;
            }
            coco.annotations.push(CocoAnnotation {
                id: coco.annotations.len() as u64 + 1,
                image_id,
                category_id: class_id as u64 + 1,
                bbox: [b.x_min, b.y_min, b.width(), b.height()],
                area: b.area(),
                iscrowd: 0,
            });
        }
        images.push(path);
    }
    let annotations = out.join(ANNOTATIONS_FILE);
    write_text(&annotations, &coco_to_json(&coco))?;
    Ok(AugmentReport { images, annotations })
}
