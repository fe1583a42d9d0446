use crate::codec::GroundTruth;
use crate::error::{Error, Result};
use crate::geometry::BBox;
use crate::tensor::Tensor;

/// An image with its labelled boxes, the unit flowing through augmentation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSample {
    /// `3 × H × W`, values in `[0, 1]`.
    pub image: Tensor<f32>,
    /// Pixel coordinates inside `[0, W] × [0, H]`.
    pub boxes: Vec<BBox>,
    pub classes: Vec<usize>,
    /// Label credit per box, in `(0, 1]`.
    pub box_weights: Vec<f64>,
}

impl TrainSample {
    /// Sample with unit box weights.
    pub fn new(image: Tensor<f32>, boxes: Vec<BBox>, classes: Vec<usize>) -> Result<Self> {
        let box_weights = vec![1.0; boxes.len()];
        let s = TrainSample {
            image,
            boxes,
            classes,
            box_weights,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn height(&self) -> usize {
        self.image.dim(1)
    }

    pub fn width(&self) -> usize {
        self.image.dim(2)
    }

    pub fn validate(&self) -> Result<()> {
        if self.image.shape().len() != 3 || self.image.dim(0) != 3 {
            return Err(Error::ShapeMismatch {
                op: "train_sample",
                expected: vec![3, 0, 0],
                actual: self.image.shape().to_vec(),
            });
        }
        if self.boxes.len() != self.classes.len() || self.boxes.len() != self.box_weights.len() {
            return Err(Error::InvalidArgument("boxes, classes and box_weights differ in length".into()));
        }
        let (w, h) = (self.width() as f64, self.height() as f64);
        for b in &self.boxes {
            b.validate()?;
            if b.x_min < 0.0 || b.y_min < 0.0 || b.x_max > w || b.y_max > h {
                return Err(Error::InvalidBox(format!("{b:?} outside {w}x{h} image")));
            }
        }
        if let Some(v) = self.box_weights.iter().find(|&&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::InvalidArgument(format!("box weight {v} outside (0, 1]")));
        }
        Ok(())
    }

    /// Boxes whose weight is at least `min_weight`, ready for encoding.
    pub fn ground_truth(&self, min_weight: f64) -> Vec<GroundTruth> {
        self.boxes
            .iter()
            .zip(&self.classes)
            .zip(&self.box_weights)
            .filter(|(_, &wt)| wt >= min_weight)
            .map(|((&bbox, &class_id), _)| GroundTruth { bbox, class_id })
            .collect()
    }
}
