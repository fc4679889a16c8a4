//! Detector assembly, losses, target assignment, decoding and training.

mod assign;
mod boxes;
mod decode;
mod loss;
mod model;
mod train;

pub use assign::{assign_targets, scale_for_size, Assignment, LabeledBox, Target};
pub use boxes::{iou, BBox};
pub use decode::{decode, nms, Detection, DEFAULT_NMS_IOU, DEFAULT_SCORE_THRESH};
pub use loss::{
    bce_loss, ciou_loss, ciou_loss_grad, ciou_parts, dfl_loss, focal_term, total_loss, CiouParts, FocalParams,
    LossBreakdown, LossOutput, LossWeights, ALPHA_GUARD, PROB_CLAMP,
};
pub use model::{build_model, Model, ModelConfig, CLS_PRIOR_BIAS};
pub use train::{
    assign_batch, compute_gradients, infer, predict, train_step, AdamW, BiasCorrection, Gradients, Schedule, StepRecord, TrainConfig, TrainState,
    BN_MOMENTUM,
};
