pub mod cv;
pub mod folds;
pub mod importance;
pub mod metrics;
pub mod report;

pub use cv::{ablation_grid, cross_validate, Cohort, CvRun, FoldArtifacts, MeanMetrics};
pub use folds::make_folds;
pub use importance::{permutation_importance, ImportanceReport};
pub use metrics::{
    auc, confusion_metrics, interp_tpr, mean_roc, probability_histogram, roc_curve, roc_points,
    BinaryMetrics, HistBin, RocPoint,
};
