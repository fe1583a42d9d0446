//! Ground truth to heatmap/side-distance targets and back.

mod decode;
mod encode;
mod gaussian;

pub use decode::{decode, peak_mask, DecodeConfig, Detection};
pub use encode::{
    box_from_sides, cell_position, encode, feature_extent, sample_weights, EncodedTargets, GroundTruth,
};
pub use gaussian::{gaussian_kernel, GaussianSpec};

/// Input pixels per feature cell of the single-level head.
pub const STRIDE: usize = 4;

/// Default Gaussian size factor.
pub const DEFAULT_ALPHA: f64 = 0.54;
