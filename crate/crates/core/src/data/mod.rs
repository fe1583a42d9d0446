//! Dataset ingestion, synthetic data, image I/O and evaluation.

mod coco;
mod eval;
mod image;
mod synth;

pub use coco::{
    coco_to_json, index_from_coco, load_coco_subset, CocoAnnotation, CocoCategory, CocoFile, CocoImage, DatasetIndex,
    ImageRecord, IndexedObject,
};
pub use eval::{coco_thresholds, eval_map, EvalGroundTruth, EvalResult, ThresholdResult, MAX_DETECTIONS};
pub use image::{
    denormalize, normalize, read_image, resize_bilinear, write_gray_png, write_image, IMAGENET_MEAN, IMAGENET_STD,
};
pub use synth::{class_color, synth_dataset, SynthSpec};
