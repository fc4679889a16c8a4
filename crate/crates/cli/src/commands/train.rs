use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use irstd_core::data::{images_to_tensor, item_seed, load_split, GrayImage, Sample, SplitName};
use irstd_core::detector::{build_model, train_step, LabeledBox, ModelConfig, Schedule, StepRecord, TrainState};
use irstd_core::Error as CoreError;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::write_file;
use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const LOSS_LOG: &str = "loss_log.csv";
pub const CHECKPOINT: &str = "checkpoint";
pub const TRAIN_STATE: &str = "train_state.txt";

const LOG_HEADER: &str = "step,lr,L_BCE,L_CIoU,L_DFL,total";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub records: Vec<StepRecord>,
    pub checkpoint: PathBuf,
    pub state: TrainState,
}

impl TrainSummary {
    /// First logged total over last logged total.
    pub fn loss_drop(&self) -> Option<f64> {
        let first = self.records.first()?.loss.total;
        let last = self.records.last()?.loss.total;
        Some(first / last)
    }
}

/// Samples of the named splits, in manifest order per split.
pub(crate) fn load_samples(manifest: &Path, splits: &[SplitName]) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for &s in splits {
        out.extend(load_split(manifest, s)?);
    }
    Ok(out)
}

/// Checks that every image fits the model input.
pub(crate) fn check_inputs(samples: &[Sample], model: &ModelConfig) -> Result<()> {
    if model.in_channels != 1 {
        return Err(CliError::Config(format!(
            "gray-level datasets need in_channels = 1, model has {}",
            model.in_channels
        )));
    }
    for s in samples {
        if s.image.width != model.input_size || s.image.height != model.input_size {
            return Err(CliError::Config(format!(
                "image {} is {}×{}, model input is {}",
                s.name, s.image.width, s.image.height, model.input_size
            )));
        }
    }
    Ok(())
}

pub(crate) fn pixel_boxes(s: &Sample) -> Vec<LabeledBox> {
    s.labels.iter().map(|g| g.to_pixels(s.image.width)).collect()
}

fn log_line(r: &StepRecord) -> String {
    let l = &r.loss;
    format!("{},{},{},{},{},{}", r.step, r.lr, l.bce, l.ciou, l.dfl, l.total)
}

/// Runs the optimizer over the configured splits, appending every step to the
/// loss log as it happens, then writes the checkpoint and training state.
pub fn train(cfg: &RunConfig) -> Result<TrainSummary> {
    let model_cfg = cfg.model.to_config();
    let tc = cfg.train.to_config(cfg.seed);
    tc.validate()?;
    let manifest = cfg
        .train
        .data
        .as_deref()
        .ok_or_else(|| CliError::Config("train needs a dataset manifest (train.data or --data)".into()))?;
    let samples = load_samples(manifest, &cfg.train.split_names()?)?;
    if samples.is_empty() {
        return Err(CliError::Data(format!("no training samples in {}", manifest.display())));
    }
    check_inputs(&samples, &model_cfg)?;
    let (model, mut store) = build_model(&model_cfg, cfg.seed)?;

    cfg.freeze()?;
    let log_path = cfg.out.join(LOSS_LOG);
    let file = File::create(&log_path).map_err(|e| CliError::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let io = |e| CliError::io(&log_path, e);
    writeln!(log, "{LOG_HEADER}").map_err(io)?;

    let mut state = TrainState::new(cfg.seed);
    let mut records = Vec::new();
    let steps_per_epoch = samples.len().div_ceil(tc.batch);
    let schedule = Schedule::new(&tc, steps_per_epoch);
    let images: Vec<&GrayImage> = samples.iter().map(|s| &s.image).collect();
    let boxes: Vec<Vec<LabeledBox>> = samples.iter().map(pixel_boxes).collect();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..tc.epochs {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(item_seed(cfg.seed, epoch as u64)));
        for batch in order.chunks(tc.batch) {
            let x = images_to_tensor(&batch.iter().map(|&i| images[i]).collect::<Vec<_>>())?;
            let gts: Vec<Vec<LabeledBox>> = batch.iter().map(|&i| boxes[i].clone()).collect();
            let step = train_step(&model, &mut store, &mut state, &schedule, &tc, &x, &gts).and_then(|r| {
                if r.loss.total.is_finite() {
                    Ok(r)
                } else {
                    Err(CoreError::Numeric(format!("non-finite loss at step {}: {:?}", r.step, r.loss)))
                }
            });
            let rec = match step {
                Ok(r) => r,
                Err(e) => {
                    log.flush().map_err(io)?;
                    return Err(e.into());
                }
            };
            writeln!(log, "{}", log_line(&rec)).map_err(io)?;
            if rec.step % 50 == 0 {
                log::info!("step {} lr {:.3e} loss {:.5}", rec.step, rec.lr, rec.loss.total);
            }
            records.push(rec);
        }
        state.epoch = epoch + 1;
    }
    log.flush().map_err(io)?;

    let checkpoint = cfg.out.join(CHECKPOINT);
    store.to_checkpoint(true).save(&checkpoint)?;
    write_file(&cfg.out.join(TRAIN_STATE), state.to_text())?;
    if let (Some(first), Some(last)) = (records.first(), records.last()) {
        log::info!(
            "trained {} steps: loss {:.5} -> {:.5}",
            records.len(),
            first.loss.total,
            last.loss.total
        );
    }
    Ok(TrainSummary {
        records,
        checkpoint,
        state,
    })
}
