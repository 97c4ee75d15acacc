//! Per-class roundtrip flows.
//!
//! For class `l` a generator maps standard-normal latents into input space, an
//! inverse maps inputs back to latents, and a discriminator tells real inputs
//! from generated ones. A logistic head on the latent code estimates
//! `P(Y = l | latent)` and is used to fine-tune the inverse so that other
//! classes land away from the class's latent mass.

mod losses;
mod model;
mod train;

pub use losses::{
    loss_backward_mmd, loss_cycle, loss_forward_gan, loss_pred_finetune, GanLosses, PROB_EPS,
};
pub use model::{
    ClassFlowDocument, ClassFlowModel, FlowArchitecture, FlowSpec, HeadFeatures, LatentSpec,
    FLOW_DOC_VERSION,
};
pub use train::{train_class_flow, train_classes, LossTrace, TrainConfig};
