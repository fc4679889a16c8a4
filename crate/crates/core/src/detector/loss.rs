use std::f64::consts::PI;
use std::ops::{Add, Div, Mul, Sub};

use super::assign::Assignment;
use super::boxes::BBox;
use super::model::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor4;

/// Lower clamp applied inside every logarithm.
pub const PROB_CLAMP: f64 = 1e-7;
/// Guard on the `(1 − IoU) + v` denominator of the aspect weight.
pub const ALPHA_GUARD: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub cls: f64,
    pub iou: f64,
    pub dfl: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            cls: 0.02,
            iou: 0.49,
            dfl: 0.49,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.cls, self.iou, self.dfl].iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::Config(format!("loss weights must be finite and non-negative: {self:?}")))
        }
    }
}

/// Focal constants of the bin penalty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FocalParams {
    pub alpha: f64,
    pub gamma: f64,
}

impl Default for FocalParams {
    fn default() -> Self {
        FocalParams { alpha: 0.25, gamma: 2.0 }
    }
}

fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Mean binary cross-entropy over paired probabilities and labels.
pub fn bce_loss(p: &[f64], y: &[f64]) -> Result<f64> {
    if p.len() != y.len() || p.is_empty() {
        return Err(Error::Dimension(format!(
            "bce needs equal non-empty lengths, got {} and {}",
            p.len(),
            y.len()
        )));
    }
    let sum: f64 = p
        .iter()
        .zip(y)
        .map(|(&p, &y)| {
            let p = clamp_prob(p);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(sum / p.len() as f64)
}

/// `−α (1 − p)^γ ln p` with `p` clamped below.
pub fn focal_term(p: f64, fp: FocalParams) -> f64 {
    -fp.alpha * (1.0 - p).max(0.0).powf(fp.gamma) * p.max(PROB_CLAMP).ln()
}

fn focal_term_grad(p: f64, fp: FocalParams) -> f64 {
    let q = (1.0 - p).max(0.0);
    let lnp = p.max(PROB_CLAMP).ln();
    let dlog = if p > PROB_CLAMP { 1.0 / p } else { 0.0 };
    let dpow = if fp.gamma == 0.0 { 0.0 } else { -fp.gamma * q.powf(fp.gamma - 1.0) };
    -fp.alpha * (dpow * lnp + q.powf(fp.gamma) * dlog)
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Pulls a gradient on softmax outputs back onto the logits.
fn softmax_backward(p: &[f64], gp: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(gp).map(|(a, b)| a * b).sum();
    p.iter().zip(gp).map(|(pi, gi)| pi * (gi - dot)).collect()
}

/// Bin penalty for one box side: focal terms on the two bins bracketing
/// `target`, weighted by proximity. Returns the value and whether the target
/// had to be clamped into range.
pub fn dfl_loss(bin_probs: &[f64], target: f64, fp: FocalParams) -> Result<(f64, bool)> {
    let (fl, wl, wr, clamped) = bracket(bin_probs.len(), target)?;
    Ok((
        wl * focal_term(bin_probs[fl], fp) + wr * focal_term(bin_probs[fl + 1], fp),
        clamped,
    ))
}

fn bracket(bins: usize, target: f64) -> Result<(usize, f64, f64, bool)> {
    if bins < 2 {
        return Err(Error::Dimension("bin penalty needs at least 2 bins".into()));
    }
    if !target.is_finite() {
        return Err(Error::Numeric(format!("bin target {target}")));
    }
    let hi = (bins - 1) as f64 - 0.01;
    let t = target.clamp(0.0, hi);
    let clamped = target < 0.0 || target > (bins - 1) as f64;
    let fl = (t.floor() as usize).min(bins - 2);
    let wr = t - fl as f64;
    Ok((fl, 1.0 - wr, wr, clamped))
}

/// Bin penalty and its gradient with respect to the side's bin logits.
fn dfl_from_logits(logits: &[f64], target: f64, fp: FocalParams) -> Result<(f64, Vec<f64>, bool)> {
    let p = softmax(logits);
    let (fl, wl, wr, clamped) = bracket(p.len(), target)?;
    let value = wl * focal_term(p[fl], fp) + wr * focal_term(p[fl + 1], fp);
    let mut gp = vec![0.0; p.len()];
    gp[fl] = wl * focal_term_grad(p[fl], fp);
    gp[fl + 1] = wr * focal_term_grad(p[fl + 1], fp);
    Ok((value, softmax_backward(&p, &gp), clamped))
}

/// Scalar with value and forward derivatives along the four predicted
/// coordinates.
#[derive(Clone, Copy, Debug)]
struct Dual {
    v: f64,
    d: [f64; 4],
}

impl Dual {
    fn cst(v: f64) -> Self {
        Dual { v, d: [0.0; 4] }
    }

    fn var(v: f64, i: usize) -> Self {
        let mut d = [0.0; 4];
        d[i] = 1.0;
        Dual { v, d }
    }

    fn zip(a: Self, b: Self, v: f64, da: f64, db: f64) -> Self {
        let mut d = [0.0; 4];
        for i in 0..4 {
            d[i] = a.d[i] * da + b.d[i] * db;
        }
        Dual { v, d }
    }

    fn max(self, o: Self) -> Self {
        if self.v >= o.v {
            self
        } else {
            o
        }
    }

    fn min(self, o: Self) -> Self {
        if self.v <= o.v {
            self
        } else {
            o
        }
    }

    fn atan2(self, x: Self) -> Self {
        let r = (self.v * self.v + x.v * x.v).max(f64::MIN_POSITIVE);
        Dual::zip(self, x, self.v.atan2(x.v), x.v / r, -self.v / r)
    }
}

impl Add for Dual {
    type Output = Dual;
    fn add(self, o: Dual) -> Dual {
        Dual::zip(self, o, self.v + o.v, 1.0, 1.0)
    }
}

impl Sub for Dual {
    type Output = Dual;
    fn sub(self, o: Dual) -> Dual {
        Dual::zip(self, o, self.v - o.v, 1.0, -1.0)
    }
}

impl Mul for Dual {
    type Output = Dual;
    fn mul(self, o: Dual) -> Dual {
        Dual::zip(self, o, self.v * o.v, o.v, self.v)
    }
}

impl Div for Dual {
    type Output = Dual;
    fn div(self, o: Dual) -> Dual {
        let q = self.v / o.v;
        Dual::zip(self, o, q, 1.0 / o.v, -q / o.v)
    }
}

/// Parts of the complete-IoU penalty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CiouParts {
    pub iou: f64,
    /// Squared center distance over squared enclosing diagonal, in `[0, 1)`.
    pub distance: f64,
    /// Aspect-ratio consistency, in `[0, 1]`.
    pub aspect: f64,
    pub alpha: f64,
    pub loss: f64,
}

fn check_boxes(pred: &BBox, gt: &BBox) -> Result<()> {
    if !pred.is_valid() {
        return Err(Error::DegenerateBox(format!("invalid predicted box {pred:?}")));
    }
    if !gt.is_valid() || gt.area() <= 0.0 {
        return Err(Error::DegenerateBox(format!("zero-area ground truth {gt:?}")));
    }
    Ok(())
}

fn ciou_dual(pred: &BBox, gt: &BBox) -> (Dual, CiouParts) {
    let p = pred.as_array();
    let [px1, py1, px2, py2] = [0, 1, 2, 3].map(|i| Dual::var(p[i], i));
    let [gx1, gy1, gx2, gy2] = gt.as_array().map(Dual::cst);
    let zero = Dual::cst(0.0);
    let one = Dual::cst(1.0);

    let iw = (px2.min(gx2) - px1.max(gx1)).max(zero);
    let ih = (py2.min(gy2) - py1.max(gy1)).max(zero);
    let inter = iw * ih;
    let (pw, ph) = (px2 - px1, py2 - py1);
    let (gw, gh) = (gx2 - gx1, gy2 - gy1);
    let union = pw * ph + gw * gh - inter;
    let iou = if union.v > 0.0 { inter / union } else { zero };

    let half = Dual::cst(0.5);
    let dx = (px1 + px2 - gx1 - gx2) * half;
    let dy = (py1 + py2 - gy1 - gy2) * half;
    let cw = px2.max(gx2) - px1.min(gx1);
    let ch = py2.max(gy2) - py1.min(gy1);
    let diag = cw * cw + ch * ch;
    let distance = if diag.v > 0.0 { (dx * dx + dy * dy) / diag } else { zero };

    let da = gw.atan2(gh) - pw.atan2(ph);
    let aspect = Dual::cst(4.0 / (PI * PI)) * da * da;
    let mut denom = one - iou + aspect;
    if denom.v < ALPHA_GUARD {
        denom = Dual::cst(ALPHA_GUARD);
    }
    let alpha = aspect / denom;
    let loss = one - iou + distance + alpha * aspect;
    (
        loss,
        CiouParts {
            iou: iou.v,
            distance: distance.v,
            aspect: aspect.v,
            alpha: alpha.v,
            loss: loss.v,
        },
    )
}

/// Complete-IoU penalty `1 − IoU + d²/c² + α·v`.
pub fn ciou_loss(pred: &BBox, gt: &BBox) -> Result<f64> {
    Ok(ciou_parts(pred, gt)?.loss)
}

pub fn ciou_parts(pred: &BBox, gt: &BBox) -> Result<CiouParts> {
    check_boxes(pred, gt)?;
    Ok(ciou_dual(pred, gt).1)
}

/// Penalty value and its gradient with respect to `(x1, y1, x2, y2)` of the
/// prediction.
pub fn ciou_loss_grad(pred: &BBox, gt: &BBox) -> Result<(f64, [f64; 4])> {
    check_boxes(pred, gt)?;
    let (l, _) = ciou_dual(pred, gt);
    Ok((l.v, l.d))
}

/// Loss components of one batch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub bce: f64,
    pub ciou: f64,
    pub dfl: f64,
    pub total: f64,
    pub positives: usize,
    /// Bin targets that fell outside the representable range.
    pub clamped_targets: usize,
}

/// Loss value plus the gradient with respect to every head output.
#[derive(Clone, Debug)]
pub struct LossOutput {
    pub breakdown: LossBreakdown,
    pub grads: Vec<Vec<f64>>,
}

/// Expected distance (in bins) for one side and the softmax behind it.
pub(crate) fn expected_bin(logits: &[f64]) -> (f64, Vec<f64>) {
    let p = softmax(logits);
    let d = p.iter().enumerate().map(|(i, pi)| i as f64 * pi).sum();
    (d, p)
}

/// Box decoded at `(row, col)` of a head with the given stride, from the
/// four sides' bin logits `[left, top, right, bottom]`.
pub(crate) fn decode_cell(sides: &[Vec<f64>; 4], row: usize, col: usize, stride: f64) -> (BBox, [Vec<f64>; 4]) {
    let cx = (col as f64 + 0.5) * stride;
    let cy = (row as f64 + 0.5) * stride;
    let e: Vec<(f64, Vec<f64>)> = sides.iter().map(|s| expected_bin(s)).collect();
    let bbox = BBox::new(cx - e[0].0 * stride, cy - e[1].0 * stride, cx + e[2].0 * stride, cy + e[3].0 * stride);
    let probs = [e[0].1.clone(), e[1].1.clone(), e[2].1.clone(), e[3].1.clone()];
    (bbox, probs)
}

/// Weighted composite loss over head outputs `(n, N + 4B, g, g)` per scale.
///
/// Classification averages over every logit of every scale; the box terms
/// average over positive cells (and over the four sides for the bin term).
pub fn total_loss(
    heads: &[&Tensor4],
    assignments: &[Assignment],
    cfg: &ModelConfig,
    w: LossWeights,
    fp: FocalParams,
) -> Result<LossOutput> {
    w.validate()?;
    let nc = cfg.num_classes;
    let nb = cfg.reg_bins;
    if heads.len() != cfg.strides.len() {
        return Err(Error::Dimension(format!("expected {} heads, got {}", cfg.strides.len(), heads.len())));
    }
    let n = heads[0].shape().n;
    if assignments.len() != n {
        return Err(Error::Dimension(format!("{} assignments for a batch of {n}", assignments.len())));
    }
    for (s, h) in heads.iter().enumerate() {
        let sh = h.shape();
        let g = cfg.grid(s);
        if sh.n != n || sh.c != cfg.head_channels() || sh.h != g || sh.w != g {
            return Err(Error::Dimension(format!("head {s} has shape {sh}")));
        }
    }

    let mut grads: Vec<Vec<f64>> = heads.iter().map(|h| vec![0.0; h.numel()]).collect();
    let cls_count: usize = heads.iter().map(|h| h.shape().n * nc * h.shape().plane()).sum();

    // classification: labels default to 0, then positives set to 1
    let mut labels: Vec<Vec<f64>> = heads.iter().map(|h| vec![0.0; h.numel()]).collect();
    for (img, a) in assignments.iter().enumerate() {
        for t in &a.targets {
            let sh = heads[t.scale].shape();
            labels[t.scale][sh.index(img, t.class, t.row, t.col)] = 1.0;
        }
    }
    let mut bce_sum = 0.0;
    for (s, h) in heads.iter().enumerate() {
        let sh = h.shape();
        for img in 0..n {
            for c in 0..nc {
                let base = sh.index(img, c, 0, 0);
                for i in base..base + sh.plane() {
                    let z = h.data()[i];
                    let y = labels[s][i];
                    let sig = 1.0 / (1.0 + (-z).exp());
                    let p = clamp_prob(sig);
                    bce_sum += -(y * p.ln() + (1.0 - y) * (1.0 - p).ln());
                    let g = if sig > PROB_CLAMP && sig < 1.0 - PROB_CLAMP { sig - y } else { 0.0 };
                    grads[s][i] = w.cls * g / cls_count as f64;
                }
            }
        }
    }
    let bce = bce_sum / cls_count as f64;

    let positives: usize = assignments.iter().map(|a| a.targets.len()).sum();
    let mut ciou_sum = 0.0;
    let mut dfl_sum = 0.0;
    let mut clamped_targets = 0;
    if positives > 0 {
        let np = positives as f64;
        for (img, a) in assignments.iter().enumerate() {
            for t in &a.targets {
                let sh = heads[t.scale].shape();
                let stride = cfg.strides[t.scale] as f64;
                let data = heads[t.scale].data();
                let idx = |side: usize, bin: usize| sh.index(img, nc + side * nb + bin, t.row, t.col);
                let sides: [Vec<f64>; 4] =
                    std::array::from_fn(|side| (0..nb).map(|bin| data[idx(side, bin)]).collect());
                let (pred, probs) = decode_cell(&sides, t.row, t.col, stride);

                let (l, dbox) = ciou_loss_grad(&pred, &t.bbox)?;
                ciou_sum += l;
                // d(box)/d(side distance): left/top subtract, right/bottom add
                let dside = [-dbox[0] * stride, -dbox[1] * stride, dbox[2] * stride, dbox[3] * stride];

                let cx = (t.col as f64 + 0.5) * stride;
                let cy = (t.row as f64 + 0.5) * stride;
                let targets = [
                    (cx - t.bbox.x1) / stride,
                    (cy - t.bbox.y1) / stride,
                    (t.bbox.x2 - cx) / stride,
                    (t.bbox.y2 - cy) / stride,
                ];
                for side in 0..4 {
                    let p = &probs[side];
                    let d: f64 = p.iter().enumerate().map(|(i, pi)| i as f64 * pi).sum();
                    let dd: Vec<f64> = p.iter().enumerate().map(|(i, pi)| pi * (i as f64 - d)).collect();
                    let (fl, gz, clamped) = dfl_from_logits(&sides[side], targets[side], fp)?;
                    dfl_sum += fl;
                    clamped_targets += clamped as usize;
                    for bin in 0..nb {
                        grads[t.scale][idx(side, bin)] +=
                            w.iou * dside[side] * dd[bin] / np + w.dfl * gz[bin] / (4.0 * np);
                    }
                }
            }
        }
    }
    let (ciou, dfl) = if positives > 0 {
        (ciou_sum / positives as f64, dfl_sum / (4.0 * positives as f64))
    } else {
        (0.0, 0.0)
    };
    let total = w.cls * bce + w.iou * ciou + w.dfl * dfl;
    if !total.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite loss: bce {bce}, ciou {ciou}, dfl {dfl}"
        )));
    }
    Ok(LossOutput {
        breakdown: LossBreakdown {
            bce,
            ciou,
            dfl,
            total,
            positives,
            clamped_targets,
        },
        grads,
    })
}
