//! ADAM, the learning-rate schedule, the training loop and checkpoints.

mod adam;
mod checkpoint;
mod config;
mod trainer;

pub use adam::{adam_step, check_grads, grad_norm, AdamConfig, AdamState};
pub use checkpoint::{
    load_params, read_header, Checkpoint, CheckpointHeader, CheckpointMeta, TensorEntry, FORMAT_VERSION, MAGIC,
    MODEL_PREFIX,
};
pub use config::{lr_at, TrainConfig};
pub use trainer::{distill, run, train_teacher, EpochLog, RunOutcome, Trainer};
