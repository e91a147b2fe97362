//! The "Sculpture" parameter generator and its meta-training loop.

mod adamw;
mod checkpoint;
mod model;
mod train;

pub use adamw::{adamw_step, AdamWConfig, AdamWState};
pub use checkpoint::{
    load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, CHECKPOINT_FORMAT,
    CHECKPOINT_VERSION,
};
pub use model::{meta_backward, meta_forward, meta_generate, Activation, ForwardCache, MetaModelParams};
pub use train::{
    init_meta_model, loss_at_theta, meta_loss, meta_loss_grad_theta, meta_train, meta_train_with,
    MetaConfig, MetaTrace, MetaTraceRow, MetaTrainOutcome, ThetaGradient,
};
