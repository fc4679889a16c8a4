//! Run configuration: built-in defaults, overridden by a TOML file, overridden
//! by command-line flags.

use std::path::{Path, PathBuf};

use irstd_core::data::{SceneSpec, SplitName};
use irstd_core::detector::{FocalParams, LossWeights, ModelConfig, TrainConfig, DEFAULT_NMS_IOU, DEFAULT_SCORE_THRESH};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Name of the resolved configuration written into every output directory.
pub const FROZEN_CONFIG: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed; every random choice of a run derives from it.
    pub seed: u64,
    pub jobs: usize,
    pub out: PathBuf,
    pub scene: SceneSection,
    pub generate: GenerateSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub sensitivity: SensitivitySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            jobs: 1,
            out: PathBuf::from("out"),
            scene: SceneSection::default(),
            generate: GenerateSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            sensitivity: SensitivitySection::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    /// Writes the resolved configuration into the output directory.
    pub fn freeze(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.out).map_err(|e| CliError::io(&self.out, e))?;
        let path = self.out.join(FROZEN_CONFIG);
        std::fs::write(&path, self.to_toml()).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }

    pub fn validate(&self) -> Result<()> {
        if self.jobs == 0 {
            return Err(CliError::Config("jobs must be at least 1".into()));
        }
        self.scene.to_spec(self.seed).validate()?;
        self.model.to_config().validate()?;
        self.train.to_config(self.seed).validate()?;
        self.train.split_names()?;
        self.eval.split_names()?;
        Ok(())
    }

    /// Sixteen scenes, trained and evaluated on all of them for 500 steps.
    pub fn overfit() -> Self {
        let all = vec!["train".to_string(), "val".to_string(), "test".to_string()];
        RunConfig {
            seed: 7,
            generate: GenerateSection { count: 16 },
            train: TrainSection {
                splits: all.clone(),
                batch: 16,
                epochs: 500,
                lr0: 0.002,
                ..TrainSection::default()
            },
            eval: EvalSection {
                splits: all,
                ..EvalSection::default()
            },
            ..RunConfig::default()
        }
    }
}

fn parse_splits(names: &[String]) -> Result<Vec<SplitName>> {
    if names.is_empty() {
        return Err(CliError::Config("at least one split is required".into()));
    }
    names
        .iter()
        .map(|n| n.parse().map_err(|_| CliError::Config(format!("unknown split `{n}`"))))
        .collect()
}

/// Synthetic scene parameters; the seed comes from the run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneSection {
    pub size: usize,
    pub targets: (usize, usize),
    pub intensity: (f64, f64),
    pub sigma: (f64, f64),
    pub box_sigmas: f64,
    pub min_separation: f64,
    pub background_level: f64,
    pub gradient_amplitude: f64,
    pub clutter_density: f64,
    pub clutter_amplitude: (f64, f64),
    pub clutter_sigma: (f64, f64),
    pub noise_std: f64,
}

impl Default for SceneSection {
    fn default() -> Self {
        let s = SceneSpec::default();
        SceneSection {
            size: s.size,
            targets: s.targets,
            intensity: s.intensity,
            sigma: s.sigma,
            box_sigmas: s.box_sigmas,
            min_separation: s.min_separation,
            background_level: s.background_level,
            gradient_amplitude: s.gradient_amplitude,
            clutter_density: s.clutter_density,
            clutter_amplitude: s.clutter_amplitude,
            clutter_sigma: s.clutter_sigma,
            noise_std: s.noise_std,
        }
    }
}

impl SceneSection {
    pub fn to_spec(&self, seed: u64) -> SceneSpec {
        SceneSpec {
            size: self.size,
            targets: self.targets,
            intensity: self.intensity,
            sigma: self.sigma,
            box_sigmas: self.box_sigmas,
            min_separation: self.min_separation,
            background_level: self.background_level,
            gradient_amplitude: self.gradient_amplitude,
            clutter_density: self.clutter_density,
            clutter_amplitude: self.clutter_amplitude,
            clutter_sigma: self.clutter_sigma,
            noise_std: self.noise_std,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub count: usize,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection { count: 100 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub input_size: usize,
    pub in_channels: usize,
    pub stem_width: usize,
    pub widths: [usize; 4],
    pub depths: [usize; 2],
    pub expansion: usize,
    pub kernel: usize,
    pub deep_depth: usize,
    pub strides: [usize; 3],
    pub reg_bins: usize,
    pub num_classes: usize,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection::from_config(&ModelConfig::default())
    }
}

impl ModelSection {
    pub fn from_config(m: &ModelConfig) -> Self {
        ModelSection {
            input_size: m.input_size,
            in_channels: m.in_channels,
            stem_width: m.stem_width,
            widths: m.widths,
            depths: m.depths,
            expansion: m.expansion,
            kernel: m.kernel,
            deep_depth: m.deep_depth,
            strides: m.strides,
            reg_bins: m.reg_bins,
            num_classes: m.num_classes,
        }
    }

    pub fn to_config(&self) -> ModelConfig {
        ModelConfig {
            input_size: self.input_size,
            in_channels: self.in_channels,
            stem_width: self.stem_width,
            widths: self.widths,
            depths: self.depths,
            expansion: self.expansion,
            kernel: self.kernel,
            deep_depth: self.deep_depth,
            strides: self.strides,
            reg_bins: self.reg_bins,
            num_classes: self.num_classes,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsSection {
    pub cls: f64,
    pub iou: f64,
    pub dfl: f64,
}

impl Default for WeightsSection {
    fn default() -> Self {
        let w = LossWeights::default();
        WeightsSection {
            cls: w.cls,
            iou: w.iou,
            dfl: w.dfl,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// Dataset manifest.
    pub data: Option<PathBuf>,
    pub splits: Vec<String>,
    pub batch: usize,
    pub epochs: usize,
    pub lr0: f64,
    pub lr_final_fraction: f64,
    pub momentum: f64,
    pub warmup_momentum: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub focal_alpha: f64,
    pub focal_gamma: f64,
    pub loss_weights: WeightsSection,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            data: None,
            splits: vec!["train".into()],
            batch: t.batch,
            epochs: t.epochs,
            lr0: t.lr0,
            lr_final_fraction: t.lr_final_fraction,
            momentum: t.momentum,
            warmup_momentum: t.warmup_momentum,
            beta2: t.beta2,
            eps: t.eps,
            weight_decay: t.weight_decay,
            warmup_epochs: t.warmup_epochs,
            focal_alpha: t.focal.alpha,
            focal_gamma: t.focal.gamma,
            loss_weights: WeightsSection::default(),
        }
    }
}

impl TrainSection {
    pub fn to_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            batch: self.batch,
            epochs: self.epochs,
            lr0: self.lr0,
            lr_final_fraction: self.lr_final_fraction,
            momentum: self.momentum,
            warmup_momentum: self.warmup_momentum,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            warmup_epochs: self.warmup_epochs,
            seed,
            weights: LossWeights {
                cls: self.loss_weights.cls,
                iou: self.loss_weights.iou,
                dfl: self.loss_weights.dfl,
            },
            focal: FocalParams {
                alpha: self.focal_alpha,
                gamma: self.focal_gamma,
            },
        }
    }

    pub fn split_names(&self) -> Result<Vec<SplitName>> {
        parse_splits(&self.splits)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub data: Option<PathBuf>,
    /// Checkpoint stem (`<stem>.bin` and `<stem>.manifest`).
    pub checkpoint: Option<PathBuf>,
    pub splits: Vec<String>,
    pub score_thresh: f64,
    pub nms_iou: f64,
    /// Score the ground truth itself instead of a model.
    pub ground_truth_as_predictions: bool,
}

impl Default for EvalSection {
    fn default() -> Self {
        EvalSection {
            data: None,
            checkpoint: None,
            splits: vec!["test".into()],
            score_thresh: DEFAULT_SCORE_THRESH,
            nms_iou: DEFAULT_NMS_IOU,
            ground_truth_as_predictions: false,
        }
    }
}

impl EvalSection {
    pub fn split_names(&self) -> Result<Vec<SplitName>> {
        parse_splits(&self.splits)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivitySection {
    pub box_sizes: Vec<f64>,
    pub shifts: Vec<f64>,
}

impl Default for SensitivitySection {
    fn default() -> Self {
        SensitivitySection {
            box_sizes: vec![3.0, 5.0, 7.0, 9.0, 16.0, 32.0],
            shifts: vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0],
        }
    }
}
