use crate::detector::{iou, Detection, LabeledBox};
use crate::error::{Error, Result};

/// IoU a detection must exceed to match a ground truth.
pub const MATCH_IOU: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
}

/// Precision, recall and F1 with `0/0 = 0`.
pub fn prf1(c: ConfusionCounts) -> (f64, f64, f64) {
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let p = ratio(c.tp, c.tp + c.fp);
    let r = ratio(c.tp, c.tp + c.fn_);
    let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f1)
}

/// A scored detection after matching.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredMatch {
    pub score: f64,
    pub tp: bool,
}

/// `(recall, precision)` after each detection in descending score order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PrCurve {
    pub points: Vec<(f64, f64)>,
}

fn sorted(matches: &[ScoredMatch]) -> Vec<ScoredMatch> {
    let mut m = matches.to_vec();
    m.sort_by(|a, b| b.score.total_cmp(&a.score));
    m
}

pub fn pr_curve(matches: &[ScoredMatch], n_gt: usize) -> PrCurve {
    let mut tp = 0usize;
    let points = sorted(matches)
        .iter()
        .enumerate()
        .map(|(i, m)| {
            tp += m.tp as usize;
            let recall = if n_gt == 0 { 0.0 } else { tp as f64 / n_gt as f64 };
            (recall, tp as f64 / (i + 1) as f64)
        })
        .collect();
    PrCurve { points }
}

/// All-point interpolated average precision: exact area under the
/// monotone precision envelope of the PR curve.
pub fn average_precision(matches: &[ScoredMatch], n_gt: usize) -> Result<f64> {
    if n_gt == 0 {
        return Err(Error::UndefinedAp("no ground truth".into()));
    }
    let curve = pr_curve(matches, n_gt);
    let mut envelope: Vec<f64> = curve.points.iter().map(|p| p.1).collect();
    for i in (0..envelope.len().saturating_sub(1)).rev() {
        envelope[i] = envelope[i].max(envelope[i + 1]);
    }
    let mut area = 0.0;
    let mut prev_recall = 0.0;
    for (&(recall, _), &prec) in curve.points.iter().zip(&envelope) {
        area += (recall - prev_recall) * prec;
        prev_recall = recall;
    }
    Ok(area)
}

/// Greedy one-to-one matching of one image's detections of `class`,
/// highest score first, each to the unmatched ground truth of highest IoU
/// above `iou_thresh`.
pub fn match_image(dets: &[Detection], gts: &[LabeledBox], class: usize, iou_thresh: f64) -> Vec<ScoredMatch> {
    let mut order: Vec<&Detection> = dets.iter().filter(|d| d.class == class).collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut used = vec![false; gts.len()];
    order
        .into_iter()
        .map(|d| {
            let best = gts
                .iter()
                .enumerate()
                .filter(|(j, g)| !used[*j] && g.class == class)
                .map(|(j, g)| (j, iou(&d.bbox, &g.bbox)))
                .filter(|&(_, v)| v > iou_thresh)
                .max_by(|a, b| a.1.total_cmp(&b.1));
            if let Some((j, _)) = best {
                used[j] = true;
            }
            ScoredMatch {
                score: d.score,
                tp: best.is_some(),
            }
        })
        .collect()
}

/// Per-class AP at IoU > 0.5, averaged over the classes present in the
/// ground truth.
pub fn map50(dets: &[Vec<Detection>], gts: &[Vec<LabeledBox>], num_classes: usize) -> Result<f64> {
    Ok(map_report(dets, gts, num_classes)?.map)
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapReport {
    pub map: f64,
    /// `(class, AP)` for classes with ground truth.
    pub per_class: Vec<(usize, f64)>,
    pub counts: ConfusionCounts,
}

pub fn map_report(dets: &[Vec<Detection>], gts: &[Vec<LabeledBox>], num_classes: usize) -> Result<MapReport> {
    if dets.len() != gts.len() {
        return Err(Error::Dimension(format!(
            "{} detection lists for {} images",
            dets.len(),
            gts.len()
        )));
    }
    let mut per_class = Vec::new();
    let mut counts = ConfusionCounts::default();
    for c in 0..num_classes {
        let n_gt: usize = gts.iter().map(|g| g.iter().filter(|b| b.class == c).count()).sum();
        let matches: Vec<ScoredMatch> = dets
            .iter()
            .zip(gts)
            .flat_map(|(d, g)| match_image(d, g, c, MATCH_IOU))
            .collect();
        let tp = matches.iter().filter(|m| m.tp).count();
        counts.tp += tp;
        counts.fp += matches.len() - tp;
        counts.fn_ += n_gt - tp;
        match average_precision(&matches, n_gt) {
            Ok(ap) => per_class.push((c, ap)),
            Err(Error::UndefinedAp(_)) => log::warn!("class {c} has no ground truth; skipped"),
            Err(e) => return Err(e),
        }
    }
    if per_class.is_empty() {
        return Err(Error::UndefinedAp("no ground truth in any class".into()));
    }
    let map = per_class.iter().map(|p| p.1).sum::<f64>() / per_class.len() as f64;
    Ok(MapReport { map, per_class, counts })
}
