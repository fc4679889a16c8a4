use super::ap::{average_precision, ScoredMatch};
use crate::data::GrayImage;
use crate::detector::{BBox, Detection, LabeledBox};
use crate::error::{Error, Result};

/// Floor on the background standard deviation.
pub const SIGMA_GUARD: f64 = 1e-6;

/// Contrast thresholds `0.1, 0.2, …, 0.9`.
pub const DELTAS: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Target pixels, surrounding background ring and their statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ContrastRegion {
    pub target: Vec<(usize, usize)>,
    pub background: Vec<(usize, usize)>,
    pub mu_t: f64,
    pub mu_b: f64,
    pub sigma_b: f64,
}

fn pixels_in(b: &BBox, img: &GrayImage) -> (usize, usize, usize, usize) {
    // pixel (x, y) belongs when its center (x + 0.5, y + 0.5) lies in the box
    let lo = |v: f64, n: usize| ((v - 0.5).ceil().max(0.0) as usize).min(n);
    let hi = |v: f64, n: usize| (((v - 0.5).floor() + 1.0).max(0.0) as usize).min(n);
    (lo(b.x1, img.width), hi(b.x2, img.width), lo(b.y1, img.height), hi(b.y2, img.height))
}

impl ContrastRegion {
    /// Box pixels versus the box dilated by its larger side on every side,
    /// clipped to the image.
    pub fn around(img: &GrayImage, b: &BBox) -> Result<Self> {
        let (x0, x1, y0, y1) = pixels_in(b, img);
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::Region(format!("box {b:?} covers no pixel centers")));
        }
        let m = b.width().max(b.height());
        let outer = BBox::new(b.x1 - m, b.y1 - m, b.x2 + m, b.y2 + m);
        let (ox0, ox1, oy0, oy1) = pixels_in(&outer, img);
        let mut target = Vec::new();
        let mut background = Vec::new();
        for y in oy0..oy1 {
            for x in ox0..ox1 {
                if (x0..x1).contains(&x) && (y0..y1).contains(&y) {
                    target.push((x, y));
                } else {
                    background.push((x, y));
                }
            }
        }
        if background.is_empty() {
            return Err(Error::Region(format!("box {b:?} leaves no background ring")));
        }
        let mean = |px: &[(usize, usize)]| px.iter().map(|&(x, y)| img.at(x, y)).sum::<f64>() / px.len() as f64;
        let mu_t = mean(&target);
        let mu_b = mean(&background);
        let var = background.iter().map(|&(x, y)| (img.at(x, y) - mu_b).powi(2)).sum::<f64>() / background.len() as f64;
        Ok(ContrastRegion {
            target,
            background,
            mu_t,
            mu_b,
            sigma_b: var.sqrt(),
        })
    }

    /// `(μ_T − μ_B) / σ_B` with `σ_B` floored.
    pub fn noco(&self) -> f64 {
        (self.mu_t - self.mu_b) / self.sigma_b.max(SIGMA_GUARD)
    }
}

pub fn noco(img: &GrayImage, b: &BBox) -> Result<f64> {
    Ok(ContrastRegion::around(img, b)?.noco())
}

/// Predicted-region contrast relative to the ground-truth region, in `[0, 1]`.
/// A ground truth without positive contrast scores 1 when the prediction
/// reaches at least its contrast, else 0.
pub fn normalized_noco(img: &GrayImage, pred: &BBox, gt: &BBox) -> Result<f64> {
    let reference = noco(img, gt)?;
    let p = match noco(img, pred) {
        Ok(v) => v,
        Err(Error::Region(_)) => return Ok(0.0),
        Err(e) => return Err(e),
    };
    if reference <= 0.0 {
        return Ok(if p >= reference { 1.0 } else { 0.0 });
    }
    Ok((p / reference).clamp(0.0, 1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MNocoReport {
    pub value: f64,
    pub per_delta: [f64; 9],
}

/// Mean over the nine thresholds of the AP obtained when a detection counts
/// only if its centroid lies in an unmatched ground truth and its normalized
/// contrast reaches the threshold.
pub fn mnocoap(dets: &[Vec<Detection>], gts: &[Vec<LabeledBox>], images: &[&GrayImage]) -> Result<MNocoReport> {
    if gts.len() != images.len() || dets.len() != gts.len() {
        return Err(Error::Data(format!(
            "{} detection lists, {} label lists, {} images",
            dets.len(),
            gts.len(),
            images.len()
        )));
    }
    let n_gt: usize = gts.iter().map(Vec::len).sum();
    // normalized contrast of every (detection, containing GT) pair, per image
    let mut candidates: Vec<Vec<(f64, Vec<(usize, f64)>)>> = Vec::with_capacity(dets.len());
    for ((d, g), img) in dets.iter().zip(gts).zip(images) {
        let mut order: Vec<&Detection> = d.iter().collect();
        order.sort_by(|a, b| b.score.total_cmp(&a.score));
        let mut per_det = Vec::with_capacity(order.len());
        for det in order {
            let (cx, cy) = (det.bbox.cx(), det.bbox.cy());
            let mut hits = Vec::new();
            for (j, gt) in g.iter().enumerate() {
                if gt.class == det.class && gt.bbox.contains(cx, cy) {
                    hits.push((j, normalized_noco(img, &det.bbox, &gt.bbox)?));
                }
            }
            per_det.push((det.score, hits));
        }
        candidates.push(per_det);
    }
    let mut per_delta = [0.0; 9];
    for (slot, &delta) in per_delta.iter_mut().zip(&DELTAS) {
        let mut matches = Vec::new();
        for (per_det, g) in candidates.iter().zip(gts) {
            let mut used = vec![false; g.len()];
            for (score, hits) in per_det {
                let best = hits
                    .iter()
                    .filter(|(j, s)| !used[*j] && *s >= delta)
                    .max_by(|a, b| a.1.total_cmp(&b.1));
                if let Some(&(j, _)) = best {
                    used[j] = true;
                }
                matches.push(ScoredMatch {
                    score: *score,
                    tp: best.is_some(),
                });
            }
        }
        *slot = average_precision(&matches, n_gt)?;
    }
    Ok(MNocoReport {
        value: per_delta.iter().sum::<f64>() / 9.0,
        per_delta,
    })
}
