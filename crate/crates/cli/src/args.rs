use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{CliError, Result};

/// Synthetic infrared small-target detection: data generation, training,
/// evaluation and cost analysis.
///
/// Settings resolve in three layers: built-in defaults, then the `--config`
/// file, then flags. Every run writes the resolved configuration to
/// `<out>/config.toml`; passing that file back reproduces the run.
#[derive(Debug, Parser)]
#[command(name = "irstd", version)]
pub struct Cli {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for generation and evaluation.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Start from a built-in preset instead of the defaults.
    #[arg(long, global = true, value_parser = ["overfit"])]
    pub preset: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render synthetic scenes with labels and a train/val/test manifest.
    Generate {
        /// Number of scenes.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train a detector and log the loss components of every step.
    Train {
        /// Dataset manifest.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr0: Option<f64>,
        /// Split to train on; repeatable.
        #[arg(long = "split")]
        splits: Vec<String>,
    },
    /// Compute precision, recall, F1, mAP@50 and mNoCoAP on a split.
    Eval {
        /// Dataset manifest.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Checkpoint stem written by `train`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Split to evaluate; repeatable.
        #[arg(long = "split")]
        splits: Vec<String>,
        /// Score the labels themselves instead of a model.
        #[arg(long)]
        ground_truth: bool,
    },
    /// Count parameters and operations layer by layer.
    Analyze {
        /// Use the 640×640 three-channel configuration.
        #[arg(long)]
        full_scale: bool,
    },
    /// Tabulate IoU of square boxes against diagonal shifts.
    Sensitivity {
        /// Box sides in pixels, comma separated.
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<f64>,
        /// Diagonal shifts in pixels, comma separated.
        #[arg(long, value_delimiter = ',')]
        shifts: Vec<f64>,
    },
}

impl Cli {
    /// Defaults (or preset), then the config file, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let c = &self.common;
        let mut cfg = match (&c.config, c.preset.as_deref()) {
            (Some(_), Some(_)) => return Err(CliError::Config("--config and --preset are exclusive".into())),
            (Some(path), None) => RunConfig::load(path)?,
            (None, Some("overfit")) => RunConfig::overfit(),
            (None, Some(other)) => return Err(CliError::Config(format!("unknown preset `{other}`"))),
            (None, None) => RunConfig::default(),
        };
        if let Some(s) = c.seed {
            cfg.seed = s;
        }
        if let Some(o) = &c.out {
            cfg.out = o.clone();
        }
        if let Some(j) = c.jobs {
            cfg.jobs = j;
        }
        match &self.command {
            Command::Generate { count } => {
                if let Some(n) = count {
                    cfg.generate.count = *n;
                }
            }
            Command::Train {
                data,
                epochs,
                batch,
                lr0,
                splits,
            } => {
                let t = &mut cfg.train;
                t.data = data.clone().or(t.data.take());
                t.epochs = epochs.unwrap_or(t.epochs);
                t.batch = batch.unwrap_or(t.batch);
                t.lr0 = lr0.unwrap_or(t.lr0);
                if !splits.is_empty() {
                    t.splits = splits.clone();
                }
            }
            Command::Eval {
                data,
                checkpoint,
                splits,
                ground_truth,
            } => {
                let e = &mut cfg.eval;
                e.data = data.clone().or(e.data.take());
                e.checkpoint = checkpoint.clone().or(e.checkpoint.take());
                if !splits.is_empty() {
                    e.splits = splits.clone();
                }
                e.ground_truth_as_predictions |= ground_truth;
            }
            Command::Analyze { full_scale } => {
                if *full_scale {
                    cfg.model = crate::config::ModelSection::from_config(&irstd_core::detector::ModelConfig::full_scale());
                }
            }
            Command::Sensitivity { sizes, shifts } => {
                if !sizes.is_empty() {
                    cfg.sensitivity.box_sizes = sizes.clone();
                }
                if !shifts.is_empty() {
                    cfg.sensitivity.shifts = shifts.clone();
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
