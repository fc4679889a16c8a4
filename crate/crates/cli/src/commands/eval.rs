use std::fmt::Write as _;

use irstd_core::data::{images_to_tensor, GrayImage};
use irstd_core::detector::{build_model, predict, Detection, LabeledBox};
use irstd_core::metrics::{map_report, match_image, mnocoap, pr_curve, prf1, ConfusionCounts, DELTAS, MATCH_IOU};
use irstd_core::tensor::param::Checkpoint;

use super::train::{check_inputs, load_samples, pixel_boxes};
use super::{par_map, write_file};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const REPORT: &str = "report.txt";
pub const PR_CSV: &str = "pr_curve.csv";
pub const NOCO_CSV: &str = "noco_ap.csv";

/// Images per inference batch.
const EVAL_BATCH: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub images: usize,
    pub ground_truths: usize,
    pub detections: usize,
    pub counts: ConfusionCounts,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub map50: f64,
    pub per_class: Vec<(usize, f64)>,
    pub mnocoap: f64,
    pub noco_ap: [f64; 9],
    /// `(class, recall, precision)` points.
    pub pr_points: Vec<(usize, f64, f64)>,
}

impl EvalReport {
    /// One `key = value` line per metric.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("images", self.images.to_string());
        kv("ground_truths", self.ground_truths.to_string());
        kv("detections", self.detections.to_string());
        kv("tp", self.counts.tp.to_string());
        kv("fp", self.counts.fp.to_string());
        kv("fn", self.counts.fn_.to_string());
        kv("precision", self.precision.to_string());
        kv("recall", self.recall.to_string());
        kv("f1", self.f1.to_string());
        kv("map50", self.map50.to_string());
        for (c, ap) in &self.per_class {
            kv(&format!("ap50_class_{c}"), ap.to_string());
        }
        kv("mnocoap", self.mnocoap.to_string());
        for (d, ap) in DELTAS.iter().zip(&self.noco_ap) {
            kv(&format!("ap_noco_{d:.1}"), ap.to_string());
        }
        s
    }

    pub fn pr_csv(&self) -> String {
        let mut s = String::from("class,recall,precision\n");
        for (c, r, p) in &self.pr_points {
            let _ = writeln!(s, "{c},{r},{p}");
        }
        s
    }

    pub fn noco_csv(&self) -> String {
        let mut s = String::from("delta,ap\n");
        for (d, ap) in DELTAS.iter().zip(&self.noco_ap) {
            let _ = writeln!(s, "{d:.1},{ap}");
        }
        s
    }
}

fn oracle_detections(gts: &[LabeledBox]) -> Vec<Detection> {
    gts.iter()
        .map(|g| Detection {
            bbox: g.bbox,
            score: 1.0,
            class: g.class,
        })
        .collect()
}

/// Scores a checkpoint (or the ground truth itself) on the configured splits
/// and writes the report, PR curve and per-threshold contrast AP.
pub fn evaluate(cfg: &RunConfig) -> Result<EvalReport> {
    let model_cfg = cfg.model.to_config();
    model_cfg.validate()?;
    let ev = &cfg.eval;
    let manifest = ev
        .data
        .as_deref()
        .ok_or_else(|| CliError::Config("eval needs a dataset manifest (eval.data or --data)".into()))?;
    let samples = load_samples(manifest, &ev.split_names()?)?;
    if samples.is_empty() {
        return Err(CliError::Data(format!("splits {:?} of {} are empty", ev.splits, manifest.display())));
    }
    let gts: Vec<Vec<LabeledBox>> = samples.iter().map(pixel_boxes).collect();
    let images: Vec<&GrayImage> = samples.iter().map(|s| &s.image).collect();

    let dets: Vec<Vec<Detection>> = if ev.ground_truth_as_predictions {
        gts.iter().map(|g| oracle_detections(g)).collect()
    } else {
        let stem = ev
            .checkpoint
            .as_deref()
            .ok_or_else(|| CliError::Config("eval needs a checkpoint (eval.checkpoint or --checkpoint)".into()))?;
        check_inputs(&samples, &model_cfg)?;
        let (model, mut store) = build_model(&model_cfg, cfg.seed)?;
        store.load_checkpoint(&Checkpoint::load(stem)?)?;
        let batches: Vec<&[&GrayImage]> = images.chunks(EVAL_BATCH).collect();
        let per_batch = par_map(&batches, cfg.jobs, |b| {
            predict(&model, &store, &images_to_tensor(b)?, ev.score_thresh, ev.nms_iou)
        });
        let mut all = Vec::with_capacity(images.len());
        for b in per_batch {
            all.extend(b?);
        }
        all
    };

    let nc = model_cfg.num_classes;
    let map = map_report(&dets, &gts, nc)?;
    let noco = mnocoap(&dets, &gts, &images)?;
    let (precision, recall, f1) = prf1(map.counts);
    let mut pr_points = Vec::new();
    for &(c, _) in &map.per_class {
        let n_gt = gts.iter().flatten().filter(|g| g.class == c).count();
        let matches: Vec<_> = dets
            .iter()
            .zip(&gts)
            .flat_map(|(d, g)| match_image(d, g, c, MATCH_IOU))
            .collect();
        pr_points.extend(pr_curve(&matches, n_gt).points.into_iter().map(|(r, p)| (c, r, p)));
    }
    let report = EvalReport {
        images: samples.len(),
        ground_truths: gts.iter().map(Vec::len).sum(),
        detections: dets.iter().map(Vec::len).sum(),
        counts: map.counts,
        precision,
        recall,
        f1,
        map50: map.map,
        per_class: map.per_class,
        mnocoap: noco.value,
        noco_ap: noco.per_delta,
        pr_points,
    };

    cfg.freeze()?;
    write_file(&cfg.out.join(REPORT), report.to_text())?;
    write_file(&cfg.out.join(PR_CSV), report.pr_csv())?;
    write_file(&cfg.out.join(NOCO_CSV), report.noco_csv())?;
    log::info!(
        "{} images: P {:.4} R {:.4} F1 {:.4} mAP50 {:.4} mNoCoAP {:.4}",
        report.images,
        report.precision,
        report.recall,
        report.f1,
        report.map50,
        report.mnocoap
    );
    Ok(report)
}
