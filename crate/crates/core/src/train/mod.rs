//! Training recipe: schedules, clipping, losses, optimizer and the step loop.

mod clip;
mod loss;
mod optim;
mod schedule;
mod trainer;

pub use clip::{clip_gradients, global_norm, ClipStats};
pub use loss::{
    downsample_gt, epe_mean, loss_multiscale, loss_sequence, model_loss, multiscale_value, LossConfig,
};
pub use optim::{AdamConfig, AdamW};
pub use schedule::{learning_rate, peak_step, LrSchedule, DEFAULT_PEAK_FRACTION, ONECYCLE_DIVISOR};
pub use trainer::{finetune, lr_at, pretrain, EvalSet, TrainPlan, TrainRecord, Trainer};

use thiserror::Error;

use crate::arch::ArchError;
use crate::data::DataError;
use crate::metrics::EvalError;
use crate::tensor::TensorError;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("step {step} outside 0..{total}")]
    Step { step: u64, total: u64 },
    #[error("non-finite gradient in parameter {parameter}")]
    NonFinite { parameter: String },
    #[error("diverged at step {step}: {reason}; last checkpoint {last_checkpoint:?}")]
    Diverged {
        step: u64,
        reason: String,
        last_checkpoint: Option<u64>,
    },
    #[error("loss: {0}")]
    Loss(String),
    #[error("checkpoint does not match: {0}")]
    Mismatch(String),
    #[error(transparent)]
    Arch(#[from] ArchError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
