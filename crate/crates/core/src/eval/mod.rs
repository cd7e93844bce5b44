//! Evaluation harness: metrics, fold plans, grid search, the nested CV
//! experiment, significance testing, and report assembly.

pub mod experiment;
pub mod folds;
pub mod grid;
pub mod metrics;
pub mod report;
pub mod wilcoxon;

pub use experiment::{run_experiment, run_experiment_with, ExperimentMeta, Families, Profile};
pub use folds::{make_fold_plan, FoldPlan, INNER_FOLDS, OUTER_FOLDS};
pub use grid::{
    grid_search, BaselineFamily, DropoutFamily, FitBudget, GridSearchOutcome, HmcFamily,
    HmcSettings, HyperCell, HyperGrid, ModelFamily, Prediction, TrainSettings,
};
pub use metrics::{mse, smse};
pub use report::{CvReport, FamilyReport, FoldResult, PairwiseTest};
pub use wilcoxon::{paired_sq_error_test, SignedRankResult};
