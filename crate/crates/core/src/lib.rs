//! Numeric core of a Gaussian-target anchor-free detector.

pub mod augment;
pub mod codec;
pub mod config;
pub mod data;
pub mod error;
pub mod geometry;
pub mod losses;
pub mod nn;
pub mod real;
pub mod rng;
pub mod store;
pub mod tensor;
pub mod train;

pub use augment::TrainSample;
pub use codec::{Detection, EncodedTargets, GroundTruth};
pub use config::RunConfig;
pub use error::{Error, Result};
pub use geometry::{giou, giou_grad, iou, BBox};
pub use real::{DType, Real};
pub use tensor::Tensor;
