//! Toy detector training, inference and evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_sample, TrainSample};
use crate::codec::{decode, encode, DecodeConfig, Detection, EncodedTargets};
use crate::config::{DatasetSource, LossConfig, RunConfig};
use crate::data::{
    coco_thresholds, eval_map, load_coco_subset, normalize, read_image, resize_bilinear, synth_dataset,
    EvalGroundTruth, EvalResult, SynthSpec,
};
use crate::error::{Error, Result};
use crate::losses::{ags_maps_for_targets, focal_loss, regression_loss_batch, total_loss, LossBreakdown};
use crate::nn::{
    reg_distances, reg_distances_backward, sigmoid_backward, sigmoid_probs, DetectorOutput, EmaState, Mode, Sgd,
    ToyDetector,
};
use crate::real::Real;
use crate::rng::keyed_stream;
use crate::store::{checkpoint_container, load_ema_state, load_model_state, load_momentum, Container};
use crate::tensor::Tensor;

pub const METRICS_SCHEMA: u32 = 1;

const STREAM_INIT: u32 = 10;
const STREAM_SHUFFLE: u32 = 11;
const STREAM_AUGMENT: u32 = 12;

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub schema: u32,
    /// 1-based: the number of completed optimizer steps.
    pub iteration: u64,
    pub lr: f64,
    #[serde(flatten)]
    pub loss: LossBreakdown,
    pub num_objects: usize,
}

/// The training set described by `cfg.dataset`, with boxes in pixels of
/// the stored images.
pub fn load_dataset(cfg: &RunConfig) -> Result<Vec<TrainSample>> {
    let d = &cfg.dataset;
    match d.source {
        DatasetSource::Synth => {
            let spec = SynthSpec {
                min_objects: d.synth_min_objects,
                max_objects: d.synth_max_objects,
                min_side: d.synth_min_side,
                max_side: d.synth_max_side,
                ..SynthSpec::new(cfg.image_height, cfg.image_width, cfg.model.num_classes)
            };
            synth_dataset(d.synth_images, &spec, cfg.seed)
        }
        DatasetSource::Coco => {
            let (ann, dir) = d
                .annotations
                .as_ref()
                .zip(d.image_dir.as_ref())
                .ok_or_else(|| Error::Config("coco dataset needs annotations and image_dir".into()))?;
            let index = load_coco_subset(ann, dir)?;
            if index.num_classes() > cfg.model.num_classes {
                return Err(Error::Config(format!(
                    "dataset has {} categories but model.num_classes = {}",
                    index.num_classes(),
                    cfg.model.num_classes
                )));
            }
            index
                .images
                .iter()
                .map(|r| {
                    let image = read_image(&r.path)?;
                    let objs: Vec<_> = r.objects.iter().filter(|o| !o.crowd).collect();
                    TrainSample::new(
                        image,
                        objs.iter().map(|o| o.bbox).collect(),
                        objs.iter().map(|o| o.class_id).collect(),
                    )
                })
                .collect()
        }
    }
}

/// Focal + GIoU loss over a batch and the gradients w.r.t. both raw head
/// outputs.
pub fn detector_loss<T: Real>(
    out: &DetectorOutput<T>,
    targets: &[EncodedTargets<T>],
    cfg: &LossConfig,
    reg_scale: f64,
) -> Result<(LossBreakdown, DetectorOutput<T>)> {
    let heat = Tensor::stack(&targets.iter().map(|t| t.class_heatmap.clone()).collect::<Vec<_>>())?;
    let probs = sigmoid_probs(&out.loc_logits);
    let (loc, grad_p) = focal_loss(&probs, &heat)?;
    let grad_logits = sigmoid_backward(&grad_p, &probs)?;

    let dist = reg_distances(&out.reg_raw, reg_scale);
    let maps = if cfg.ags.enabled {
        let mut maps = Vec::with_capacity(targets.len());
        for (n, t) in targets.iter().enumerate() {
            maps.push(ags_maps_for_targets(&out.loc_logits.batch_item(n)?, t)?);
        }
        Some(maps)
    } else {
        None
    };
    let (reg, grad_d) = regression_loss_batch(&dist, targets, maps.as_deref(), &cfg.ags)?;
    let grad_raw = reg_distances_backward(&grad_d, &out.reg_raw, &dist)?;

    let (wl, wr) = (T::lit(cfg.w_loc), T::lit(cfg.w_reg));
    let breakdown = total_loss(loc.as_f64(), reg.as_f64(), cfg.w_loc, cfg.w_reg);
    Ok((
        breakdown,
        DetectorOutput {
            loc_logits: grad_logits.map(|g| g * wl),
            reg_raw: grad_raw.map(|g| g * wr),
        },
    ))
}

/// Normalized `N × 3 × H × W` batch from samples already at the input size.
pub fn batch_tensor(samples: &[TrainSample], cfg: &RunConfig) -> Result<Tensor<f32>> {
    let images = samples
        .iter()
        .map(|s| normalize(&s.image, &cfg.normalize.mean, &cfg.normalize.std))
        .collect::<Result<Vec<_>>>()?;
    Tensor::stack(&images)
}

pub struct Trainer {
    pub config: RunConfig,
    pub model: ToyDetector<f32>,
    pub sgd: Sgd<f32>,
    pub ema: Option<EmaState<f32>>,
    /// Completed optimizer steps.
    pub iteration: u64,
    dataset: Vec<TrainSample>,
}

impl Trainer {
    pub fn new(config: RunConfig, dataset: Vec<TrainSample>) -> Result<Self> {
        config.validate()?;
        if dataset.is_empty() {
            return Err(Error::InvalidArgument("training set is empty".into()));
        }
        let mut rng = keyed_stream(config.seed, STREAM_INIT, 0);
        let mut model = ToyDetector::new(config.model.clone(), &mut rng)?;
        let sgd = Sgd::new(&mut model, config.optim.momentum, config.optim.weight_decay);
        let ema = if config.ema.enabled {
            Some(EmaState::from_model(&mut model, config.ema.decay)?)
        } else {
            None
        };
        Ok(Trainer {
            config,
            model,
            sgd,
            ema,
            iteration: 0,
            dataset,
        })
    }

    /// Restores model, optimizer, EMA and iteration count from a checkpoint
    /// written by [`Trainer::checkpoint`].
    pub fn resume(config: RunConfig, dataset: Vec<TrainSample>, ckpt: &Container<f32>) -> Result<Self> {
        let mut t = Trainer::new(config, dataset)?;
        if ckpt.config_hash != t.config.hash() {
            return Err(Error::Config("checkpoint was written under a different configuration".into()));
        }
        load_model_state(ckpt, &mut t.model, false)?;
        load_momentum(ckpt, &mut t.model, &mut t.sgd)?;
        if t.ema.is_some() {
            t.ema = Some(
                load_ema_state(ckpt, &mut t.model)?
                    .ok_or_else(|| Error::Format("checkpoint has no EMA shadow to resume".into()))?,
            );
        }
        t.iteration = ckpt.iteration;
        Ok(t)
    }

    pub fn dataset(&self) -> &[TrainSample] {
        &self.dataset
    }

    /// Dataset indices for step `iter` (0-based): consecutive slices of a
    /// per-epoch permutation drawn from `(seed, epoch)`.
    pub fn batch_indices(&self, iter: u64) -> Vec<usize> {
        let n = self.dataset.len() as u64;
        let b = self.config.train.batch_size as u64;
        let mut cached: Option<(u64, Vec<usize>)> = None;
        (0..b)
            .map(|k| {
                let g = iter * b + k;
                let epoch = g / n;
                if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
                    let mut perm: Vec<usize> = (0..self.dataset.len()).collect();
                    perm.shuffle(&mut keyed_stream(self.config.seed, STREAM_SHUFFLE, epoch));
                    cached = Some((epoch, perm));
                }
                cached.as_ref().expect("just filled").1[(g % n) as usize]
            })
            .collect()
    }

    /// Augmented, encoded batch for step `iter`.
    pub fn prepare_batch(&self, iter: u64) -> Result<(Tensor<f32>, Vec<EncodedTargets<f32>>)> {
        let cfg = &self.config;
        let (h, w) = (cfg.image_height, cfg.image_width);
        let b = cfg.train.batch_size as u64;
        let mut samples = Vec::new();
        let mut targets = Vec::new();
        for (k, idx) in self.batch_indices(iter).into_iter().enumerate() {
            let mut rng = keyed_stream(cfg.seed, STREAM_AUGMENT, iter * b + k as u64);
            let s = augment_sample(&self.dataset, idx, &cfg.augment, h, w, &mut rng)?;
            let gt: Vec<_> = s
                .ground_truth(cfg.loss.min_box_weight)
                .into_iter()
                .filter(|g| g.bbox.area() > 0.0)
                .map(|g| crate::codec::GroundTruth {
                    bbox: g.bbox.cast::<f32>(),
                    class_id: g.class_id,
                })
                .collect();
            targets.push(encode(&gt, h, w, cfg.model.num_classes, cfg.alpha)?);
            samples.push(s);
        }
        Ok((batch_tensor(&samples, cfg)?, targets))
    }

    /// One optimizer step.
    pub fn step(&mut self) -> Result<StepMetrics> {
        let iter = self.iteration;
        let (x, targets) = self.prepare_batch(iter)?;
        self.model.zero_grad();
        let out = self.model.forward(&x, Mode::Train)?;
        let (loss, grad) = detector_loss(&out, &targets, &self.config.loss, self.config.model.reg_scale)?;
        if !loss.total.is_finite() {
            return Err(Error::InvalidArgument(format!("loss diverged at iteration {}", iter + 1)));
        }
        self.model.backward(&grad)?;
        let lr = self.config.optim.lr.at(iter);
        self.sgd.step(&mut self.model, lr)?;
        if let Some(ema) = self.ema.as_mut() {
            ema.update_from(&mut self.model)?;
        }
        self.iteration += 1;
        Ok(StepMetrics {
            schema: METRICS_SCHEMA,
            iteration: self.iteration,
            lr,
            loss,
            num_objects: targets.iter().map(|t| t.objects.len()).sum(),
        })
    }

    pub fn checkpoint(&mut self) -> Container<f32> {
        let mut c = checkpoint_container(&mut self.model, self.ema.as_ref(), Some(&self.sgd));
        c.iteration = self.iteration;
        c.config_hash = self.config.hash();
        c
    }

    /// A copy of the model carrying the EMA shadow parameters.
    pub fn ema_model(&self) -> Result<Option<ToyDetector<f32>>> {
        match &self.ema {
            None => Ok(None),
            Some(ema) => {
                let mut m = self.model.clone();
                ema.write_into(&mut m)?;
                Ok(Some(m))
            }
        }
    }
}

/// Eval-mode inference and decoding; samples are resized to the configured
/// input size and detections are in that frame.
pub fn predict(model: &mut ToyDetector<f32>, samples: &[TrainSample], cfg: &RunConfig) -> Result<Vec<Vec<Detection>>> {
    let (h, w) = (cfg.image_height, cfg.image_width);
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(cfg.train.batch_size.max(1)) {
        let resized = chunk
            .iter()
            .map(|s| resize_bilinear(s, h, w))
            .collect::<Result<Vec<_>>>()?;
        let x = batch_tensor(&resized, cfg)?;
        let pred = model.forward(&x, Mode::Eval)?;
        let probs = sigmoid_probs(&pred.loc_logits);
        let dist = reg_distances(&pred.reg_raw, cfg.model.reg_scale);
        for n in 0..chunk.len() {
            out.push(decode_image(&probs.batch_item(n)?, &dist.batch_item(n)?, &cfg.decode, h, w)?);
        }
    }
    Ok(out)
}

fn decode_image(probs: &Tensor<f32>, dist: &Tensor<f32>, cfg: &DecodeConfig, h: usize, w: usize) -> Result<Vec<Detection>> {
    Ok(decode(probs, dist, cfg, h, w)?
        .into_iter()
        .map(|d| Detection {
            bbox: d.bbox.cast::<f64>(),
            class_id: d.class_id,
            score: d.score as f64,
        })
        .collect())
}

/// Ground truth of `samples` after resizing to the configured input size.
pub fn eval_ground_truth(samples: &[TrainSample], cfg: &RunConfig) -> Result<Vec<Vec<EvalGroundTruth>>> {
    samples
        .iter()
        .map(|s| {
            let r = resize_bilinear(s, cfg.image_height, cfg.image_width)?;
            Ok(r.boxes
                .iter()
                .zip(&r.classes)
                .map(|(&bbox, &class_id)| EvalGroundTruth {
                    bbox,
                    class_id,
                    crowd: false,
                })
                .collect())
        })
        .collect()
}

/// COCO-style mAP of `model` on `samples`.
pub fn evaluate(model: &mut ToyDetector<f32>, samples: &[TrainSample], cfg: &RunConfig) -> Result<EvalResult> {
    let dets = predict(model, samples, cfg)?;
    let gt = eval_ground_truth(samples, cfg)?;
    eval_map(&dets, &gt, &coco_thresholds(), cfg.model.num_classes)
}
