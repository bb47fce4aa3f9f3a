//! Optimisation, schedules, checkpoints and the train/evaluate/predict loops.

mod checkpoint;
mod manifest;
mod metrics;
mod optim;
mod schedule;
mod trainer;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_FORMAT};
pub use manifest::RunManifest;
pub use metrics::{metrics_to_jsonl, write_metrics, EpochMetrics};
pub use optim::{adam_step, clip_grad_norm, AdamConfig, AdamState};
pub use schedule::LinearSchedule;
pub use trainer::{
    batch_gradients, evaluate, predict, prepare_all, resolve_embedding_dim, train, BatchResult,
    EvalReport, Prediction, TrainOptions, TrainOutcome, TypeAccuracy,
};
