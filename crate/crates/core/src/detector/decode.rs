use super::boxes::{iou, BBox};
use super::loss::decode_cell;
use super::model::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

pub const DEFAULT_SCORE_THRESH: f64 = 0.25;
pub const DEFAULT_NMS_IOU: f64 = 0.45;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Detection {
    pub bbox: BBox,
    pub score: f64,
    pub class: usize,
}

/// Greedy per-class suppression: a box is dropped when its IoU with an
/// already kept box of the same class is at least `nms_iou`. Output is sorted
/// by descending score.
pub fn nms(mut dets: Vec<Detection>, nms_iou: f64) -> Vec<Detection> {
    dets.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        if kept
            .iter()
            .all(|k| k.class != d.class || iou(&k.bbox, &d.bbox) < nms_iou)
        {
            kept.push(d);
        }
    }
    kept
}

/// Detections of image `img` from the three head outputs.
pub fn decode(
    heads: &[&Tensor4],
    img: usize,
    cfg: &ModelConfig,
    score_thresh: f64,
    nms_iou: f64,
) -> Result<Vec<Detection>> {
    for t in [score_thresh, nms_iou] {
        if !(t > 0.0 && t < 1.0) {
            return Err(Error::Config(format!("threshold {t} outside (0, 1)")));
        }
    }
    if heads.len() != cfg.strides.len() {
        return Err(Error::Dimension(format!("expected {} heads, got {}", cfg.strides.len(), heads.len())));
    }
    let nc = cfg.num_classes;
    let nb = cfg.reg_bins;
    let mut dets = Vec::new();
    for (s, h) in heads.iter().enumerate() {
        let sh = h.shape();
        if sh.c != cfg.head_channels() || img >= sh.n {
            return Err(Error::Dimension(format!("head {s} has shape {sh}")));
        }
        let stride = cfg.strides[s] as f64;
        for row in 0..sh.h {
            for col in 0..sh.w {
                let mut boxed: Option<BBox> = None;
                for c in 0..nc {
                    let z = h.at(img, c, row, col);
                    let score = 1.0 / (1.0 + (-z).exp());
                    if score < score_thresh {
                        continue;
                    }
                    let bbox = *boxed.get_or_insert_with(|| {
                        let sides: [Vec<f64>; 4] = std::array::from_fn(|side| {
                            (0..nb).map(|bin| h.at(img, nc + side * nb + bin, row, col)).collect()
                        });
                        decode_cell(&sides, row, col, stride).0
                    });
                    dets.push(Detection { bbox, score, class: c });
                }
            }
        }
    }
    Ok(nms(dets, nms_iou))
}
