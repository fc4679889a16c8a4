//! Detection quality: matching, AP, contrast statistics and the box
//! sensitivity analysis.

mod ap;
mod noco;

pub use ap::{
    average_precision, map50, map_report, match_image, pr_curve, prf1, ConfusionCounts, MapReport, PrCurve,
    ScoredMatch, MATCH_IOU,
};
pub use noco::{mnocoap, noco, normalized_noco, ContrastRegion, MNocoReport, DELTAS, SIGMA_GUARD};

pub use crate::detector::iou;
use crate::detector::BBox;

/// IoU of a `box_size` square with copies shifted diagonally by each shift.
pub fn iou_sensitivity(box_size: f64, shifts: &[f64]) -> Vec<(f64, f64)> {
    let a = BBox::new(0.0, 0.0, box_size, box_size);
    shifts.iter().map(|&s| (s, iou(&a, &a.translate(s, s)))).collect()
}
