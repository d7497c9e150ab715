//! Optimization: Adam, checkpoints and the epoch loop.

mod adam;
mod checkpoint;
mod train;

pub use adam::{clip_global_norm, global_norm, AdamState, BETA1, BETA2, EPSILON};
pub use checkpoint::{Checkpoint, CheckpointError, SavedParam, FORMAT_VERSION};
pub use train::{
    evaluate_model, metrics_csv, predict_answers, prepare_training, train, train_step, write_metrics,
    EpochMetrics, RunOutput, TrainItem, TrainOutcome, METRICS_HEADER,
};
