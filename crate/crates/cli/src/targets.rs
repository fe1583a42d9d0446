//! `encode`, `decode` and `dump-heatmap`.

use std::path::{Path, PathBuf};

use afdet_core::codec::{decode, encode, GroundTruth};
use afdet_core::data::{load_coco_subset, resize_bilinear, write_gray_png};
use afdet_core::nn::{sigmoid_probs, Mode};
use afdet_core::store::{load_model_state, Container};
use afdet_core::train::{batch_tensor, load_dataset, Trainer};
use afdet_core::{Detection, EncodedTargets, RunConfig, Tensor};
use serde::Serialize;
use serde_json::json;

use crate::error::{CliError, Result};
use crate::fsutil::{ensure_dir, write_via_temp};

pub const TARGETS_KIND: &str = "targets";
pub const TARGETS_FILE: &str = "targets.afdet";
const SECTION: &str = "targets";

/// Where `encode` takes its boxes from.
#[derive(Debug, Clone, Default)]
pub struct EncodeInput {
    /// COCO annotation file; without it, sample `index` of the configured
    /// dataset is used.
    pub annotations: Option<PathBuf>,
    /// Defaults to the annotation file's directory.
    pub image_dir: Option<PathBuf>,
    /// Defaults to the first image of the file.
    pub image_id: Option<u64>,
    pub index: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct EncodeReport {
    pub container: PathBuf,
    pub image_height: usize,
    pub image_width: usize,
    pub feature_height: usize,
    pub feature_width: usize,
    pub num_objects: usize,
    pub evicted: Vec<usize>,
    pub heatmaps: Vec<PathBuf>,
}

fn resolve_objects(cfg: &RunConfig, input: &EncodeInput) -> Result<(usize, usize, Vec<GroundTruth>)> {
    match &input.annotations {
        Some(ann) => {
            let dir = match &input.image_dir {
                Some(d) => d.clone(),
                None => ann.parent().map(Path::to_path_buf).unwrap_or_default(),
            };
            let index = load_coco_subset(ann, &dir).map_err(|e| CliError::Usage(e.to_string()))?;
            let record = match input.image_id {
                Some(id) => index.images.iter().find(|r| r.id == id),
                None => index.images.first(),
            }
            .ok_or_else(|| CliError::Usage(format!("{} has no matching image", ann.display())))?;
            let objects = record
                .objects
                .iter()
                .filter(|o| !o.crowd)
                .map(|o| GroundTruth {
                    bbox: o.bbox,
                    class_id: o.class_id,
                })
                .collect();
            Ok((record.height as usize, record.width as usize, objects))
        }
        None => {
            let data = load_dataset(cfg)?;
            let s = data.get(input.index).ok_or_else(|| {
                CliError::Usage(format!("sample index {} out of range ({} samples)", input.index, data.len()))
            })?;
            Ok((s.height(), s.width(), s.ground_truth(0.0)))
        }
    }
}

pub fn targets_container(t: &EncodedTargets<f32>, cfg: &RunConfig) -> Container<f32> {
    let mut c = Container::new(TARGETS_KIND);
    c.config_hash = cfg.hash();
    let ids = Tensor::from_fn(t.weight_map.shape(), |i| t.object_id[i] as f32);
    c.push(SECTION, "class_heatmap", t.class_heatmap.clone());
    c.push(SECTION, "reg_target", t.reg_target.clone());
    c.push(SECTION, "weight_map", t.weight_map.clone());
    c.push(SECTION, "object_id", ids);
    let objects: Vec<GroundTruth> = t
        .objects
        .iter()
        .map(|o| GroundTruth {
            bbox: o.bbox.cast::<f64>(),
            class_id: o.class_id,
        })
        .collect();
    c.meta = json!({
        "image_height": t.image_height,
        "image_width": t.image_width,
        "alpha": cfg.alpha,
        "objects": objects,
        "evicted": t.evicted,
    });
    c
}

/// Writes one grayscale PNG per class channel of a `C × h × w` map.
pub fn write_class_pngs(maps: &Tensor<f32>, dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let (c, h, w) = (maps.dim(0), maps.dim(1), maps.dim(2));
    let mut paths = Vec::with_capacity(c);
    for class in 0..c {
        let plane = Tensor::from_vec(&[h, w], maps.data()[class * h * w..(class + 1) * h * w].to_vec())?;
        let path = dir.join(format!("{prefix}_c{class}.png"));
        write_via_temp(&path, |tmp| write_gray_png(&plane, tmp))?;
        paths.push(path);
    }
    Ok(paths)
}

pub fn cmd_encode(cfg: &RunConfig, input: &EncodeInput, viz: bool) -> Result<EncodeReport> {
    let (h, w, objects) = resolve_objects(cfg, input)?;
    let objects: Vec<GroundTruth<f32>> = objects
        .iter()
        .map(|o| GroundTruth {
            bbox: o.bbox.cast::<f32>(),
            class_id: o.class_id,
        })
        .collect();
    let t = encode(&objects, h, w, cfg.model.num_classes, cfg.alpha).map_err(|e| CliError::Usage(e.to_string()))?;
    let out = &cfg.output_dir;
    ensure_dir(out)?;
    let container = out.join(TARGETS_FILE);
    targets_container(&t, cfg).write(&container)?;
    let heatmaps = if viz {
        write_class_pngs(&t.class_heatmap, out, "heatmap")?
    } else {
        Vec::new()
    };
    Ok(EncodeReport {
        container,
        image_height: h,
        image_width: w,
        feature_height: t.feature_height(),
        feature_width: t.feature_width(),
        num_objects: t.objects.len(),
        evicted: t.evicted.clone(),
        heatmaps,
    })
}

fn meta_usize(c: &Container<f32>, key: &str) -> Result<usize> {
    c.meta
        .get(key)
        .and_then(|v| v.as_u64())
        .map(|v| v as usize)
        .ok_or_else(|| CliError::Usage(format!("targets container lacks `{key}`")))
}

/// Decodes the heatmap and side distances stored by `encode`.
pub fn cmd_decode(cfg: &RunConfig, input: &Path) -> Result<Vec<Detection>> {
    let c = Container::<f32>::read(input)?;
    if c.kind != TARGETS_KIND {
        return Err(CliError::Usage(format!(
            "{} is a `{}` container, expected `{TARGETS_KIND}`",
            input.display(),
            c.kind
        )));
    }
    let get = |name: &str| {
        c.get(SECTION, name)
            .ok_or_else(|| CliError::Usage(format!("{} lacks tensor `{name}`", input.display())))
    };
    let (heat, reg) = (get("class_heatmap")?, get("reg_target")?);
    let (h, w) = (meta_usize(&c, "image_height")?, meta_usize(&c, "image_width")?);
    Ok(decode(heat, reg, &cfg.decode, h, w)?
        .into_iter()
        .map(|d| Detection {
            bbox: d.bbox.cast::<f64>(),
            class_id: d.class_id,
            score: d.score as f64,
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct HeatmapReport {
    pub index: usize,
    pub predicted: Vec<PathBuf>,
    pub ground_truth: Vec<PathBuf>,
}

/// Predicted (and ground-truth) class heatmaps of one dataset sample. Without
/// a checkpoint the freshly initialized model is used.
pub fn cmd_dump_heatmap(cfg: &RunConfig, checkpoint: Option<&Path>, use_ema: bool, index: usize) -> Result<HeatmapReport> {
    let data = load_dataset(cfg)?;
    let sample = data
        .get(index)
        .ok_or_else(|| CliError::Usage(format!("sample index {index} out of range ({} samples)", data.len())))?;
    let sample = resize_bilinear(sample, cfg.image_height, cfg.image_width)?;
    let mut model = Trainer::new(cfg.clone(), vec![sample.clone()])?.model;
    if let Some(path) = checkpoint {
        load_model_state(&Container::read(path)?, &mut model, use_ema)?;
    }
    let x = batch_tensor(std::slice::from_ref(&sample), cfg)?;
    let probs = sigmoid_probs(&model.forward(&x, Mode::Eval)?.loc_logits).batch_item(0)?;
    let gt: Vec<GroundTruth<f32>> = sample
        .ground_truth(0.0)
        .iter()
        .map(|g| GroundTruth {
            bbox: g.bbox.cast::<f32>(),
            class_id: g.class_id,
        })
        .collect();
    let targets = encode(&gt, cfg.image_height, cfg.image_width, cfg.model.num_classes, cfg.alpha)?;
    let out = &cfg.output_dir;
    ensure_dir(out)?;
    Ok(HeatmapReport {
        index,
        predicted: write_class_pngs(&probs, out, &format!("pred_{index:04}"))?,
        ground_truth: write_class_pngs(&targets.class_heatmap, out, &format!("gt_{index:04}"))?,
    })
}
