//! Detection-aware augmentation. Every stochastic operation takes an
//! explicit random source and has a deterministic core that tests can drive
//! directly.

mod geometric;
mod gridmask;
mod mix;
mod pipeline;
mod sample;

pub use geometric::{crop_with_window, expand_with, random_crop, random_expand, CropConfig, ExpandConfig, CROP_ATTEMPTS};
pub use gridmask::{apply_gridmask, gridmask, GridMaskConfig, GridMaskParams};
pub use mix::{cutmix, cutmix_patch_size, cutmix_rect, cutmix_with_rect, mixup, sample_lambda, Rect, DEFAULT_BETA};
pub use pipeline::{augment_sample, AugmentConfig, MixConfig, MixMode};
pub use sample::TrainSample;
