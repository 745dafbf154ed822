//! Optimisation, evaluation and cross-validation.

mod adam;
mod cv;
mod metrics;
mod trainer;

pub use adam::{adam_step, clip_global_norm, AdamState};
pub use cv::{
    ablation_table, cross_validate, run_ablation, write_cv_reports, CvOptions, CvReport, FoldReport,
};
pub use metrics::{argmax, ConfusionMatrix, EvalReport};
pub use trainer::{evaluate, predict_labels, train_fold, TrainOutcome};
