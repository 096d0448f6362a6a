//! Mask-aware low-rank adapters and their trainer.

mod adapter;
mod optim;
mod trainer;

pub use adapter::{Adapter, AdapterMode};
pub use optim::{sgd_step, AdamParams, Moments, OptimizerKind, WarmupSchedule};
pub use trainer::{
    attach_adapters, batch_gradients, merge, step, train, BatchGradients, OptimizerState,
    StepRecord, TrainConfig, TrainingReport,
};
