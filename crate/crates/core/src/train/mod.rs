//! ℓ₁ training with AdamW and a warmup + step schedule, checkpoints, and
//! evaluation by MAE, RMSE and SSIM.

mod checkpoint;
mod eval;
mod metrics;
mod optim;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use eval::{evaluate, EvalReport, EvalTransform, SampleMetrics};
pub use metrics::{l1_loss, mae, mse, rmse, ssim_2d, ssim_volume};
pub use optim::{adamw_step, AdamState, AdamWConfig};
pub use trainer::{
    check_geometry, eval_l1, lr_at_epoch, stack_batch, train, EpochRecord, TrainConfig, TrainHistory, TrainOutput,
};
