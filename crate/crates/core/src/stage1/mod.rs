//! First stage: per-frame 3D pose by integral regression over 3D heatmaps.

mod heatmap;
mod model;

pub use heatmap::{
    decode_backward, normalize_heatmap, soft_argmax, stage1_loss, stage1_loss_grad, Heatmap3D, HeatmapGrid, LossMode,
};
pub use model::{
    decode_loss_grad, logits_to_heatmap, sidecar_path, stage1_forward, to_root_relative, train_stage1, BackboneStage,
    ImageTensor, Stage1Config, Stage1Model, Stage1Sample, Stage1Tape, Stage1TrainConfig, HEAD_KERNEL, HEAD_LAYERS,
    HEAD_STRIDE,
};
