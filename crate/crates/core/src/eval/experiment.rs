//! The nested cross-validation experiment: per-fold grid search, outer
//! refit, metric collection, and pairwise significance testing.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::folds::FoldPlan;
use crate::eval::grid::{
    grid_search, project_split, BaselineFamily, DropoutFamily, FitBudget, HmcFamily, HmcSettings,
    HyperCell, HyperGrid, ModelFamily, TrainSettings,
};
use crate::eval::metrics;
use crate::eval::report::{CvReport, FamilyReport, FoldResult, PairwiseTest};
use crate::eval::wilcoxon::paired_sq_error_test;
use crate::net::DesignMatrix;
use crate::seeding;

/// Compute profile: `Full` for real runs, `Fast` for CI/smoke budgets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Full,
    Fast,
}

/// Default HMC settings per profile: `(inner, outer)`. Inner-loop chains are
/// shortened for tractability; outer refits use the full run.
pub fn hmc_settings(profile: Profile) -> (HmcSettings, HmcSettings) {
    match profile {
        Profile::Full => (
            HmcSettings {
                step_size: 0.01,
                leapfrog_steps: 20,
                num_samples: 500,
                burn_in: 250,
                thinning: 1,
            },
            HmcSettings {
                step_size: 0.01,
                leapfrog_steps: 20,
                num_samples: 2000,
                burn_in: 1000,
                thinning: 1,
            },
        ),
        Profile::Fast => (
            HmcSettings {
                step_size: 0.05,
                leapfrog_steps: 10,
                num_samples: 150,
                burn_in: 100,
                thinning: 1,
            },
            HmcSettings {
                step_size: 0.05,
                leapfrog_steps: 15,
                num_samples: 400,
                burn_in: 200,
                thinning: 1,
            },
        ),
    }
}

pub fn train_settings(profile: Profile) -> TrainSettings {
    match profile {
        Profile::Full => TrainSettings {
            epochs: 200,
            learning_rate: 1e-2,
            batch_size: 16,
        },
        Profile::Fast => TrainSettings {
            epochs: 60,
            learning_rate: 1e-2,
            batch_size: 16,
        },
    }
}

pub fn t_samples(profile: Profile) -> usize {
    match profile {
        Profile::Full => 1000,
        Profile::Fast => 200,
    }
}

pub fn max_epochs(profile: Profile) -> usize {
    match profile {
        Profile::Full => 500,
        Profile::Fast => 150,
    }
}

/// Weight precision feeding the dropout decay term (the grid searches the
/// rate; the precision stays at the default).
pub const DEFAULT_WEIGHT_PRECISION: f64 = 1.0;
pub const DEFAULT_VALIDATION_FRACTION: f64 = 0.2;
pub const DEFAULT_PCA_COMPONENTS: usize = 5;

/// The three model families compared by the experiment.
pub struct Families {
    pub hmc: HmcFamily,
    pub dropout: DropoutFamily,
    pub baseline: BaselineFamily,
}

impl Families {
    pub fn with_profile(profile: Profile) -> Self {
        let (inner, outer) = hmc_settings(profile);
        Self {
            hmc: HmcFamily { inner, outer },
            dropout: DropoutFamily {
                train: train_settings(profile),
                t_samples: t_samples(profile),
                weight_precision: DEFAULT_WEIGHT_PRECISION,
            },
            baseline: BaselineFamily {
                learning_rate: train_settings(profile).learning_rate,
                batch_size: train_settings(profile).batch_size,
                validation_fraction: DEFAULT_VALIDATION_FRACTION,
                max_epochs: max_epochs(profile),
            },
        }
    }

    pub fn as_dyn(&self) -> Vec<&dyn ModelFamily> {
        vec![&self.hmc, &self.dropout, &self.baseline]
    }

    fn notes(&self) -> Vec<String> {
        vec![format!(
            "inner-loop HMC chains shortened to num_samples={}, burn_in={}; outer refits use num_samples={}, burn_in={}",
            self.hmc.inner.num_samples,
            self.hmc.inner.burn_in,
            self.hmc.outer.num_samples,
            self.hmc.outer.burn_in
        )]
    }
}

/// Run identification embedded in every report.
#[derive(Debug, Clone)]
pub struct ExperimentMeta {
    pub seed: u64,
    pub pca_k: usize,
    pub config_hash: String,
    pub notes: Vec<String>,
}

struct FoldOutcome {
    selected: HyperCell,
    mse: f64,
    smse: Option<f64>,
    /// `(original row index, squared error)` per outer-test patient.
    sq_errors: Vec<(usize, f64)>,
}

/// Nested CV over explicit families: per outer fold, inner grid search,
/// preprocessing and model refit on the full outer-training split, and
/// evaluation on the outer test split. Tasks derive private RNG streams, so
/// the report is identical for any worker count.
pub fn run_experiment_with(
    families: &[&dyn ModelFamily],
    data: &DesignMatrix,
    grid: &HyperGrid,
    plan: &FoldPlan,
    meta: &ExperimentMeta,
) -> Result<CvReport> {
    if families.is_empty() {
        return Err(Error::InvalidConfig("no model families supplied".into()));
    }
    if plan.n() != data.n() {
        return Err(Error::LengthMismatch {
            context: "fold plan vs data",
            left: plan.n(),
            right: data.n(),
        });
    }
    let n_folds = plan.outer_folds().len();
    let tasks: Vec<(usize, usize)> = (0..families.len())
        .flat_map(|fi| (0..n_folds).map(move |fold| (fi, fold)))
        .collect();

    let outcomes: Vec<Result<FoldOutcome>> = tasks
        .par_iter()
        .map(|&(fi, fold)| {
            let family = families[fi];
            let context = || format!("family {}, outer fold {}", family.name(), fold + 1);
            let gs = grid_search(family, fold, plan, grid, data, meta.pca_k, meta.seed)
                .map_err(|e| e.with_context(context()))?;
            let train_idx = plan.outer_train(fold);
            let test_idx = plan.outer_test(fold);
            let split = project_split(data, &train_idx, test_idx, meta.pca_k)
                .map_err(|e| e.with_context(context()))?;
            let refit_seed = seeding::mix(&[
                meta.seed,
                seeding::label(family.name()),
                seeding::label("outer-refit"),
                fold as u64,
            ]);
            let pred = family
                .fit_predict(
                    &gs.selected,
                    &split.train,
                    &split.test_rows,
                    refit_seed,
                    FitBudget::Outer,
                )
                .map_err(|e| e.with_context(context()))?;
            let mse = metrics::mse(&split.test_targets, pred.point_estimates())
                .map_err(|e| e.with_context(context()))?;
            let smse = match pred.distribution() {
                Some(d) => Some(
                    metrics::smse(&split.test_targets, d)
                        .map_err(|e| e.with_context(context()))?,
                ),
                None => None,
            };
            let sq_errors = test_idx
                .iter()
                .zip(pred.point_estimates())
                .zip(&split.test_targets)
                .map(|((&i, p), y)| (i, (y - p) * (y - p)))
                .collect();
            Ok(FoldOutcome {
                selected: gs.selected,
                mse,
                smse,
                sq_errors,
            })
        })
        .collect();

    let outcomes: Vec<FoldOutcome> = outcomes.into_iter().collect::<Result<Vec<_>>>()?;

    let mut family_reports = Vec::with_capacity(families.len());
    let mut pooled_errors: Vec<Vec<(usize, f64)>> = Vec::with_capacity(families.len());
    for (fi, family) in families.iter().enumerate() {
        let mut folds = Vec::with_capacity(n_folds);
        let mut pooled = Vec::with_capacity(data.n());
        for fold in 0..n_folds {
            let outcome = &outcomes[fi * n_folds + fold];
            folds.push(FoldResult {
                fold: fold + 1,
                mse: outcome.mse,
                smse: outcome.smse,
                selected: Some(outcome.selected.clone()),
            });
            pooled.extend_from_slice(&outcome.sq_errors);
        }
        pooled.sort_by_key(|&(i, _)| i);
        pooled_errors.push(pooled);
        family_reports.push(FamilyReport::from_folds(family.name(), folds)?);
    }

    let mut significance = Vec::new();
    for a in 0..families.len() {
        for b in (a + 1)..families.len() {
            let errs_a: Vec<f64> = pooled_errors[a].iter().map(|&(_, e)| e).collect();
            let errs_b: Vec<f64> = pooled_errors[b].iter().map(|&(_, e)| e).collect();
            let result = paired_sq_error_test(&errs_a, &errs_b)?;
            significance.push(PairwiseTest {
                family_a: families[a].name().to_string(),
                family_b: families[b].name().to_string(),
                statistic: result.statistic,
                p_value: result.p_value,
                n_effective: result.n_effective,
            });
        }
    }

    Ok(CvReport {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: meta.config_hash.clone(),
        seed: meta.seed,
        notes: meta.notes.clone(),
        families: family_reports,
        significance,
    })
}

/// Nested CV with the three standard families at the given profile.
pub fn run_experiment(
    data: &DesignMatrix,
    grid: &HyperGrid,
    plan: &FoldPlan,
    profile: Profile,
    meta: &ExperimentMeta,
) -> Result<CvReport> {
    grid.validate()?;
    let families = Families::with_profile(profile);
    let mut meta = meta.clone();
    meta.notes.extend(families.notes());
    run_experiment_with(&families.as_dyn(), data, grid, plan, &meta)
}
