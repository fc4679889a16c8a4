use std::f64::consts::PI;

use super::assign::{assign_targets, Assignment, LabeledBox};
use super::decode::{decode, Detection};
use super::loss::{total_loss, FocalParams, LossBreakdown, LossWeights};
use super::model::Model;
use crate::blocks::{apply_bn_updates, Ctx, Mode};
use crate::error::{Error, Result};
use crate::tensor::param::{BufferId, ParamId, ParamStore, ParamTensor};
use crate::tensor::{ChannelStats, Tape, Tensor4};

/// Momentum of running normalization statistics.
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    pub epochs: usize,
    pub lr0: f64,
    /// Final learning rate as a fraction of `lr0`.
    pub lr_final_fraction: f64,
    /// First-moment decay after warm-up.
    pub momentum: f64,
    /// First-moment decay at the start of warm-up.
    pub warmup_momentum: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub focal: FocalParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 16,
            epochs: 100,
            lr0: 0.001,
            lr_final_fraction: 0.5,
            momentum: 0.937,
            warmup_momentum: 0.8,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0005,
            warmup_epochs: 3,
            seed: 0,
            weights: LossWeights::default(),
            focal: FocalParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad(format!("lr0 must be positive, got {}", self.lr0));
        }
        if self.batch == 0 {
            return bad("batch must be positive".into());
        }
        // zero epochs is a no-op run
        if self.epochs > 0 && self.warmup_epochs > self.epochs {
            return bad(format!(
                "warm-up of {} epochs exceeds {} epochs",
                self.warmup_epochs, self.epochs
            ));
        }
        for (name, v) in [
            ("momentum", self.momentum),
            ("warmup_momentum", self.warmup_momentum),
            ("beta2", self.beta2),
        ] {
            if !(0.0..1.0).contains(&v) {
                return bad(format!("{name} must lie in [0, 1), got {v}"));
            }
        }
        if !(self.lr_final_fraction >= 0.0 && self.weight_decay >= 0.0 && self.eps > 0.0) {
            return bad("final fraction, weight decay and eps must be non-negative".into());
        }
        self.weights.validate()
    }
}

/// Learning rate and first-moment decay per optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub total_steps: usize,
    pub warmup_steps: usize,
    pub lr0: f64,
    pub final_fraction: f64,
    pub momentum: f64,
    pub warmup_momentum: f64,
}

impl Schedule {
    pub fn new(cfg: &TrainConfig, steps_per_epoch: usize) -> Self {
        let spe = steps_per_epoch.max(1);
        Schedule {
            total_steps: cfg.epochs * spe,
            warmup_steps: cfg.warmup_epochs * spe,
            lr0: cfg.lr0,
            final_fraction: cfg.lr_final_fraction,
            momentum: cfg.momentum,
            warmup_momentum: cfg.warmup_momentum,
        }
    }

    /// Linear ramp to `lr0` over warm-up (starting at `lr0 / warmup_steps`),
    /// then a half cosine ending at `lr0 · final_fraction` on the last step.
    pub fn lr(&self, step: usize) -> f64 {
        let w = self.warmup_steps;
        if step < w {
            return self.lr0 * (step + 1) as f64 / w as f64;
        }
        let span = self.total_steps.saturating_sub(w + 1);
        let progress = if span == 0 {
            1.0
        } else {
            ((step - w) as f64 / span as f64).min(1.0)
        };
        let f = self.final_fraction;
        self.lr0 * (f + (1.0 - f) * 0.5 * (1.0 + (PI * progress).cos()))
    }

    pub fn beta1(&self, step: usize) -> f64 {
        let w = self.warmup_steps;
        if step < w {
            self.warmup_momentum + (self.momentum - self.warmup_momentum) * step as f64 / w as f64
        } else {
            self.momentum
        }
    }
}

/// Adaptive-moment update with decoupled weight decay.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamW {
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

/// Bias corrections `1 − Πβ1` and `1 − β2^t` for the current step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasCorrection {
    pub first: f64,
    pub second: f64,
}

impl AdamW {
    pub fn update(&self, p: &mut ParamTensor, grad: &[f64], lr: f64, beta1: f64, bc: BiasCorrection, decay: bool) {
        let shrink = if decay { 1.0 - lr * self.weight_decay } else { 1.0 };
        let data = p.value.data_mut();
        for i in 0..data.len() {
            let g = grad[i];
            p.moment1[i] = beta1 * p.moment1[i] + (1.0 - beta1) * g;
            p.moment2[i] = self.beta2 * p.moment2[i] + (1.0 - self.beta2) * g * g;
            let m = p.moment1[i] / bc.first;
            let v = p.moment2[i] / bc.second;
            data[i] = data[i] * shrink - lr * m / (v.sqrt() + self.eps);
        }
        p.step_count += 1;
    }
}

/// Position in the run; serialised next to checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub epoch: usize,
    pub step: usize,
    /// Product of the first-moment decays used so far.
    pub beta1_product: f64,
    pub seed: u64,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        TrainState {
            epoch: 0,
            step: 0,
            beta1_product: 1.0,
            seed,
        }
    }

    pub fn to_text(&self) -> String {
        format!(
            "epoch {}\nstep {}\nbeta1_product {:e}\nseed {}\n",
            self.epoch, self.step, self.beta1_product, self.seed
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut s = TrainState::new(0);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: &str| Error::Parse {
                line: i + 1,
                msg: msg.to_string(),
            };
            let (key, value) = line.split_once(' ').ok_or_else(|| err("expected `key value`"))?;
            let value = value.trim();
            match key {
                "epoch" => s.epoch = value.parse().map_err(|_| err("bad epoch"))?,
                "step" => s.step = value.parse().map_err(|_| err("bad step"))?,
                "beta1_product" => s.beta1_product = value.parse().map_err(|_| err("bad beta1_product"))?,
                "seed" => s.seed = value.parse().map_err(|_| err("bad seed"))?,
                _ => return Err(err("unknown key")),
            }
        }
        Ok(s)
    }
}

/// Loss and schedule values of one optimizer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub loss: LossBreakdown,
}

/// Assignments for a batch of per-image box lists.
pub fn assign_batch(model: &Model, gts: &[Vec<LabeledBox>]) -> Result<Vec<Assignment>> {
    gts.iter().map(|g| assign_targets(g, &model.cfg)).collect()
}

/// Training-mode loss and parameter gradients, without updating anything.
pub struct Gradients {
    pub loss: LossBreakdown,
    pub params: Vec<(ParamId, Vec<f64>)>,
    pub bn_updates: Vec<(BufferId, ChannelStats)>,
}

/// Forward pass in training mode with dropout seeded by `seed`, composite
/// loss, and backward pass.
pub fn compute_gradients(
    model: &Model,
    store: &ParamStore,
    images: &Tensor4,
    assignments: &[Assignment],
    weights: LossWeights,
    focal: FocalParams,
    seed: u64,
) -> Result<Gradients> {
    let mut tape = Tape::new();
    let x = tape.constant(images.clone());
    let (heads, bound, bn_updates) = {
        let mut cx = Ctx::new(&mut tape, store, Mode::Train, seed);
        let heads = model.forward(&mut cx, x)?;
        (heads, cx.bound(), cx.take_bn_updates())
    };
    let out = {
        let values: Vec<&Tensor4> = heads.iter().map(|h| tape.value(*h)).collect();
        total_loss(&values, assignments, &model.cfg, weights, focal)?
    };
    let root = tape.external_scalar(&heads, out.breakdown.total, out.grads)?;
    tape.backward(root)?;
    let mut params = Vec::with_capacity(bound.len());
    for (id, v) in bound {
        let Some(g) = tape.grad(v) else { continue };
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient for {} (loss {:?})",
                store.name(id),
                out.breakdown
            )));
        }
        params.push((id, g.to_vec()));
    }
    Ok(Gradients {
        loss: out.breakdown,
        params,
        bn_updates,
    })
}

/// One forward/backward pass and parameter update.
pub fn train_step(
    model: &Model,
    store: &mut ParamStore,
    state: &mut TrainState,
    schedule: &Schedule,
    cfg: &TrainConfig,
    images: &Tensor4,
    gts: &[Vec<LabeledBox>],
) -> Result<StepRecord> {
    if images.shape().n == 0 || images.shape().n != gts.len() {
        return Err(Error::Data(format!(
            "batch of {} images with {} label lists",
            images.shape().n,
            gts.len()
        )));
    }
    let assignments = assign_batch(model, gts)?;
    let step = state.step;
    let seed = state.seed ^ (step as u64).wrapping_mul(0xD1B5_4A32_D192_ED03);
    let grads = compute_gradients(model, store, images, &assignments, cfg.weights, cfg.focal, seed)?;

    let lr = schedule.lr(step);
    let beta1 = schedule.beta1(step);
    state.beta1_product *= beta1;
    let bc = BiasCorrection {
        first: 1.0 - state.beta1_product,
        second: 1.0 - cfg.beta2.powi(step as i32 + 1),
    };
    let opt = AdamW {
        beta2: cfg.beta2,
        eps: cfg.eps,
        weight_decay: cfg.weight_decay,
    };
    for (id, g) in grads.params {
        let decay = store.params()[id.0].decay;
        opt.update(store.get_mut(id), &g, lr, beta1, bc, decay);
    }
    apply_bn_updates(store, &grads.bn_updates, BN_MOMENTUM);
    state.step += 1;
    Ok(StepRecord {
        step,
        lr,
        loss: grads.loss,
    })
}

/// Inference-mode head outputs for a batch.
pub fn infer(model: &Model, store: &ParamStore, images: &Tensor4) -> Result<[Tensor4; 3]> {
    let mut tape = Tape::new();
    let x = tape.constant(images.clone());
    let heads = {
        let mut cx = Ctx::new(&mut tape, store, Mode::Infer, 0).frozen();
        model.forward(&mut cx, x)?
    };
    Ok(heads.map(|h| tape.value(h).clone()))
}

/// Decoded detections for every image of a batch.
pub fn predict(
    model: &Model,
    store: &ParamStore,
    images: &Tensor4,
    score_thresh: f64,
    nms_iou: f64,
) -> Result<Vec<Vec<Detection>>> {
    let heads = infer(model, store, images)?;
    let refs: Vec<&Tensor4> = heads.iter().collect();
    (0..images.shape().n)
        .map(|i| decode(&refs, i, &model.cfg, score_thresh, nms_iou))
        .collect()
}
