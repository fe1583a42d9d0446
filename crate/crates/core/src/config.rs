//! Run configuration shared by the trainer and the command-line tool.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentConfig;
use crate::codec::{DecodeConfig, DEFAULT_ALPHA};
use crate::data::{IMAGENET_MEAN, IMAGENET_STD};
use crate::error::{Error, Result};
use crate::losses::{AgsConfig, DEFAULT_W_LOC, DEFAULT_W_REG};
use crate::nn::{LrSchedule, ModelConfig, DEFAULT_EMA_DECAY};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetSource {
    Synth,
    Coco,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub source: DatasetSource,
    pub synth_images: usize,
    pub synth_min_objects: usize,
    pub synth_max_objects: usize,
    /// Synthetic box sides as fractions of the shorter image side.
    pub synth_min_side: f64,
    pub synth_max_side: f64,
    pub annotations: Option<PathBuf>,
    pub image_dir: Option<PathBuf>,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            source: DatasetSource::Synth,
            synth_images: 8,
            synth_min_objects: 1,
            synth_max_objects: 4,
            synth_min_side: 0.12,
            synth_max_side: 0.4,
            annotations: None,
            image_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub w_loc: f64,
    pub w_reg: f64,
    pub ags: AgsConfig,
    /// Boxes whose mixing weight falls below this are not encoded.
    pub min_box_weight: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            w_loc: DEFAULT_W_LOC,
            w_reg: DEFAULT_W_REG,
            ags: AgsConfig::default(),
            min_box_weight: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            lr: LrSchedule::default(),
            momentum: 0.9,
            weight_decay: 0.0004,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmaConfig {
    pub enabled: bool,
    pub decay: f64,
}

impl Default for EmaConfig {
    fn default() -> Self {
        EmaConfig {
            enabled: true,
            decay: DEFAULT_EMA_DECAY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NormalizeConfig {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl Default for NormalizeConfig {
    fn default() -> Self {
        NormalizeConfig {
            mean: IMAGENET_MEAN,
            std: IMAGENET_STD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: u64,
    pub batch_size: usize,
    /// Checkpoint interval in iterations; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 500,
            batch_size: 4,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub image_height: usize,
    pub image_width: usize,
    /// Gaussian kernel size factor.
    pub alpha: f64,
    pub model: ModelConfig,
    pub dataset: DatasetConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub ema: EmaConfig,
    pub augment: AugmentConfig,
    pub decode: DecodeConfig,
    pub normalize: NormalizeConfig,
    pub train: TrainConfig,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            image_height: 128,
            image_width: 128,
            alpha: DEFAULT_ALPHA,
            model: ModelConfig::default(),
            dataset: DatasetConfig::default(),
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            ema: EmaConfig::default(),
            augment: AugmentConfig::default(),
            decode: DecodeConfig::default(),
            normalize: NormalizeConfig::default(),
            train: TrainConfig::default(),
            output_dir: PathBuf::from("runs/afdet"),
        }
    }
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let (h, w) = (self.image_height, self.image_width);
        if h == 0 || w == 0 || h % 16 != 0 || w % 16 != 0 {
            return Err(bad(format!("image size {h}x{w} must be positive multiples of 16")));
        }
        if !(self.alpha > 0.0) {
            return Err(bad("alpha must be positive"));
        }
        self.model.validate()?;
        self.loss.ags.validate()?;
        self.augment.validate()?;
        if !(self.loss.w_loc >= 0.0 && self.loss.w_reg >= 0.0) {
            return Err(bad("loss weights must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.loss.min_box_weight) {
            return Err(bad("loss.min_box_weight must lie in [0, 1]"));
        }
        let lr = &self.optim.lr;
        if !(lr.base_lr > 0.0) || !(lr.gamma > 0.0) || !(0.0..=1.0).contains(&lr.warmup_factor) {
            return Err(bad("optim.lr needs base_lr > 0, gamma > 0 and warmup_factor in [0, 1]"));
        }
        if lr.milestones.windows(2).any(|m| m[0] > m[1]) {
            return Err(bad("optim.lr.milestones must be ascending"));
        }
        if !(0.0..1.0).contains(&self.optim.momentum) || !(self.optim.weight_decay >= 0.0) {
            return Err(bad("optim.momentum must lie in [0, 1) and weight_decay must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.ema.decay) {
            return Err(bad("ema.decay must lie in [0, 1]"));
        }
        if self.decode.topk == 0 {
            return Err(bad("decode.topk must be positive"));
        }
        if self.train.batch_size < 2 {
            return Err(bad("train.batch_size must be at least 2 (batch norm needs batch statistics)"));
        }
        let d = &self.dataset;
        match d.source {
            DatasetSource::Synth => {
                if d.synth_images == 0 || d.synth_min_objects == 0 || d.synth_min_objects > d.synth_max_objects {
                    return Err(bad("dataset.synth_* describes an empty dataset"));
                }
                if !(d.synth_min_side > 0.0 && d.synth_min_side <= d.synth_max_side && d.synth_max_side <= 1.0) {
                    return Err(bad("dataset.synth_min_side/max_side must satisfy 0 < min ≤ max ≤ 1"));
                }
            }
            DatasetSource::Coco => {
                if d.annotations.is_none() || d.image_dir.is_none() {
                    return Err(bad("dataset.source = coco needs dataset.annotations and dataset.image_dir"));
                }
            }
        }
        if self.normalize.std.iter().any(|&s| !(s > 0.0)) {
            return Err(bad("normalize.std must be positive"));
        }
        Ok(())
    }

    /// Hash of everything that shapes a training trajectory. Run length,
    /// checkpoint cadence and the output directory are excluded so a run can
    /// be extended or relocated and still resume.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.train.iterations = 0;
        c.train.checkpoint_every = 0;
        c.output_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&c).expect("config always serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Every leaf key in dotted form with its default value.
    pub fn default_keys() -> Vec<(String, String)> {
        let v = serde_json::to_value(RunConfig::default()).expect("config always serializes");
        let mut out = Vec::new();
        flatten("", &v, &mut out);
        out
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
    match v {
        serde_json::Value::Object(map) => {
            for (k, child) in map {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, child, out);
            }
        }
        leaf => out.push((prefix.to_string(), leaf.to_string())),
    }
}
