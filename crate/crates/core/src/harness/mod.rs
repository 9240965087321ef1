//! Optimizer, training loops, evaluation, ablation runner and metrics output.

pub mod ablation;
pub mod adam;
pub mod config;
pub mod evaluate;
pub mod gradsuite;
pub mod loader;
pub mod metrics;
pub mod train;

pub use adam::{adam_step, Adam, AdamConfig, AdamState};
pub use config::{DataConfig, EncoderSource, RunConfig, TrainConfig};
pub use evaluate::{evaluate, evaluate_encoded, majority_answer, EvalOptions, EvalReport, Tally};
pub use loader::{eval_view, Vocabs};
pub use metrics::{read_metrics, write_metrics, MetricsRow};
pub use train::{
    load_model, run_pretrain, save_model, train_vqa, CheckpointMeta, EpochRecord, RunRecord, TrainOutcome,
};
pub use ablation::{matrix, parse_grid, run_ablation, AblationOptions, AblationSummary, Cell};
