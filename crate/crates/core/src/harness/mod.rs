//! Training, evaluation, loss comparison, checkpoints, and attention export.

mod attention;
mod checkpoint;
mod compare;
mod config;
mod dataset;
mod evaluate;
mod optim;
mod train;

pub use attention::{export_attention, AttentionExport};
pub use checkpoint::Checkpoint;
pub use compare::{compare_losses, CompareConfig, Comparison, PairTest, RunResult, Summary, Variant, SUBSETS};
pub use config::{read_json, AttentionConfig, EvalConfig, OptimizerConfig, Range, RunConfig};
pub use dataset::{check_compatible, clinical_ranges, feature_schema, in_split, is_validation, Examples, Split};
pub use evaluate::{
    evaluate, evaluate_examples, horizon_metrics, load_examples, predict_logits, probabilities, restore, tau_of,
    write_report, HorizonMetrics, MetricsReport, Restored,
};
pub use optim::Adam;
pub use train::{train, train_with, EpochLog, TrainOutcome, CHECKPOINT_NAME, CONFIG_NAME, LOG_NAME};
