//! Training objective: focal localization loss, AGS reweighting, GIoU
//! regression loss and their weighted total.

mod ags;
mod focal;
mod regression;

use serde::{Deserialize, Serialize};

pub use ags::{ags_map, ags_maps_for_targets, ags_softmax, reweight_giou, AgsConfig};
pub use focal::{focal_loss, PROB_EPS};
pub use regression::{regression_loss, regression_loss_batch, regression_terms, RegressionTerms};

pub const DEFAULT_W_LOC: f64 = 1.0;
pub const DEFAULT_W_REG: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub loc: f64,
    pub reg: f64,
    pub total: f64,
    pub w_loc: f64,
    pub w_reg: f64,
}

/// `total = w_loc * loc + w_reg * reg`.
pub fn total_loss(loc: f64, reg: f64, w_loc: f64, w_reg: f64) -> LossBreakdown {
    LossBreakdown {
        loc,
        reg,
        total: w_loc * loc + w_reg * reg,
        w_loc,
        w_reg,
    }
}
