//! Optimizer, schedule, metrics and the cross-validated training harness.

pub mod metrics;
pub mod optim;
pub mod trainer;

pub use metrics::{auc, metrics, summarize, ConfusionCounts, Metrics, Summary};
pub use optim::{cosine_lr, AdamW, AdamWParams};
pub use trainer::{
    aggregate_folds, checkpoint_dir, evaluate, run_cross_validation, train_fold, write_epoch_csv, write_json,
    Aggregate, Dataset, EpochLog, Evaluation, FoldOutcome, FoldReport, RunReport, TestMetrics, TrainConfig,
};
