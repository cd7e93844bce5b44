//! Hyperparameter grid and the inner-loop grid search.
//!
//! Each model family enumerates its own cells from the shared grid (the HMC
//! network searches prior precision, the dropout network searches the rate,
//! the baseline searches rate and patience; all search architectures). A
//! cell's inner score is the mean validation MSE over the five inner splits,
//! with preprocessing refit per split. Ties break toward fewer parameters,
//! then smaller dropout / larger precision, then grid order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baseline::{self, EarlyStopConfig, OptimizerConfig};
use crate::bayes::{self, BayesSpec};
use crate::dropout::{self, DropoutConfig};
use crate::error::{Error, Result};
use crate::eval::folds::{FoldPlan, INNER_FOLDS};
use crate::eval::metrics;
use crate::hmc::{self, HmcConfig};
use crate::net::{Architecture, DesignMatrix};
use crate::predictive::PredictiveDistribution;
use crate::preprocess::Preprocessor;
use crate::seeding;

/// Architecture bounds searched in the experiment protocol: one or two
/// hidden layers, 100 to 300 units each.
pub const MIN_GRID_WIDTH: usize = 100;
pub const MAX_GRID_WIDTH: usize = 300;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperGrid {
    pub architectures: Vec<Architecture>,
    /// HMC axis.
    pub prior_precisions: Vec<f64>,
    /// MC-dropout and baseline axis.
    pub dropout_rates: Vec<f64>,
    /// Baseline axis.
    pub early_stop_patiences: Vec<usize>,
}

impl HyperGrid {
    pub fn validate(&self) -> Result<()> {
        if self.architectures.is_empty() {
            return Err(Error::InvalidConfig("grid lists no architectures".into()));
        }
        for arch in &self.architectures {
            let hidden = arch.hidden_layers();
            if hidden.is_empty() || hidden.len() > 2 {
                return Err(Error::InvalidConfig(format!(
                    "grid architectures need 1 or 2 hidden layers, got {hidden:?}"
                )));
            }
            if hidden
                .iter()
                .any(|&w| !(MIN_GRID_WIDTH..=MAX_GRID_WIDTH).contains(&w))
            {
                return Err(Error::InvalidConfig(format!(
                    "grid widths must lie in [{MIN_GRID_WIDTH}, {MAX_GRID_WIDTH}], got {hidden:?}"
                )));
            }
        }
        if self.prior_precisions.is_empty() || self.prior_precisions.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::InvalidConfig(
                "prior precisions must be a nonempty list of positive reals".into(),
            ));
        }
        if self.dropout_rates.is_empty()
            || self
                .dropout_rates
                .iter()
                .any(|&r| !(0.0..=dropout::MAX_DROPOUT_RATE).contains(&r))
        {
            return Err(Error::InvalidConfig(format!(
                "dropout rates must be a nonempty list within [0, {}]",
                dropout::MAX_DROPOUT_RATE
            )));
        }
        if self.early_stop_patiences.is_empty() || self.early_stop_patiences.contains(&0) {
            return Err(Error::InvalidConfig(
                "early-stop patiences must be a nonempty list of positive integers".into(),
            ));
        }
        Ok(())
    }

    /// Default experiment grid: architectures spanning the searched range
    /// (including the two-hidden-layer shapes every Bayesian run selected),
    /// precision, dropout and patience axes.
    pub fn paper_default(input_dim: usize) -> Result<Self> {
        let shapes: [&[usize]; 6] = [
            &[100],
            &[200],
            &[300],
            &[100, 100],
            &[200, 200],
            &[300, 300],
        ];
        let architectures = shapes
            .iter()
            .map(|s| Architecture::new(input_dim, s.to_vec(), crate::net::Activation::Tanh))
            .collect::<Result<Vec<_>>>()?;
        let grid = Self {
            architectures,
            prior_precisions: vec![0.01, 0.1, 1.0, 10.0],
            dropout_rates: vec![0.0, 0.1, 0.25, 0.5],
            early_stop_patiences: vec![5, 20],
        };
        grid.validate()?;
        Ok(grid)
    }

    /// Shrunk grid for the fast profile (CI and smoke runs).
    pub fn fast(input_dim: usize) -> Result<Self> {
        let architectures = vec![Architecture::new(
            input_dim,
            vec![100],
            crate::net::Activation::Tanh,
        )?];
        let grid = Self {
            architectures,
            prior_precisions: vec![0.1, 1.0],
            dropout_rates: vec![0.0, 0.25],
            early_stop_patiences: vec![5],
        };
        grid.validate()?;
        Ok(grid)
    }
}

/// One grid cell: an architecture plus the axes a family actually searches.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperCell {
    pub architecture: Architecture,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub prior_precision: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub dropout_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub patience: Option<usize>,
}

impl HyperCell {
    pub fn describe(&self) -> String {
        let mut parts = vec![format!("hidden={:?}", self.architecture.hidden_layers())];
        if let Some(l) = self.prior_precision {
            parts.push(format!("precision={l}"));
        }
        if let Some(r) = self.dropout_rate {
            parts.push(format!("dropout={r}"));
        }
        if let Some(p) = self.patience {
            parts.push(format!("patience={p}"));
        }
        parts.join(", ")
    }
}

/// How much compute a fit may spend: inner-loop fits run shortened HMC
/// chains, outer refits use the full settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitBudget {
    Inner,
    Outer,
}

/// Model output on a test set: a bare point estimate or a full predictive
/// distribution.
#[derive(Debug, Clone)]
pub enum Prediction {
    Point(Vec<f64>),
    Posterior(PredictiveDistribution),
}

impl Prediction {
    pub fn point_estimates(&self) -> &[f64] {
        match self {
            Prediction::Point(v) => v,
            Prediction::Posterior(p) => &p.means,
        }
    }

    pub fn distribution(&self) -> Option<&PredictiveDistribution> {
        match self {
            Prediction::Point(_) => None,
            Prediction::Posterior(p) => Some(p),
        }
    }
}

/// A model family the harness can grid-search and refit. `train` rows are
/// already projected; `seed` fully determines the fit.
pub trait ModelFamily: Sync {
    fn name(&self) -> &'static str;
    fn cells(&self, grid: &HyperGrid) -> Vec<HyperCell>;
    fn fit_predict(
        &self,
        cell: &HyperCell,
        train: &DesignMatrix,
        test_rows: &[Vec<f64>],
        seed: u64,
        budget: FitBudget,
    ) -> Result<Prediction>;
}

/// Chain settings without a seed; the harness derives per-task seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmcSettings {
    pub step_size: f64,
    pub leapfrog_steps: usize,
    pub num_samples: usize,
    pub burn_in: usize,
    pub thinning: usize,
}

impl HmcSettings {
    pub fn to_config(&self, seed: u64) -> Result<HmcConfig> {
        HmcConfig::new(
            self.step_size,
            self.leapfrog_steps,
            self.num_samples,
            self.burn_in,
            self.thinning,
            seed,
        )
    }
}

/// Shared optimizer settings for the two trained (non-sampled) families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
}

pub struct HmcFamily {
    pub inner: HmcSettings,
    pub outer: HmcSettings,
}

impl ModelFamily for HmcFamily {
    fn name(&self) -> &'static str {
        "HMC BNN"
    }

    fn cells(&self, grid: &HyperGrid) -> Vec<HyperCell> {
        let mut cells = Vec::new();
        for arch in &grid.architectures {
            for &precision in &grid.prior_precisions {
                cells.push(HyperCell {
                    architecture: arch.clone(),
                    prior_precision: Some(precision),
                    dropout_rate: None,
                    patience: None,
                });
            }
        }
        cells
    }

    fn fit_predict(
        &self,
        cell: &HyperCell,
        train: &DesignMatrix,
        test_rows: &[Vec<f64>],
        seed: u64,
        budget: FitBudget,
    ) -> Result<Prediction> {
        let precision = cell
            .prior_precision
            .ok_or_else(|| Error::InvalidConfig("HMC cell lacks a prior precision".into()))?;
        let sigma2 = bayes::estimate_noise_variance(train, bayes::RIDGE_ALPHA);
        let spec = BayesSpec::tied(precision, sigma2, &cell.architecture)?;
        let settings = match budget {
            FitBudget::Inner => self.inner,
            FitBudget::Outer => self.outer,
        };
        let config = settings.to_config(seed)?;
        let chain = hmc::run_chain(&cell.architecture, &spec, train, &config)?;
        let pred = hmc::predict(&cell.architecture, &spec, &chain, test_rows)?;
        Ok(Prediction::Posterior(pred))
    }
}

pub struct DropoutFamily {
    pub train: TrainSettings,
    pub t_samples: usize,
    /// Weight precision feeding the decay term (the searched axis is the
    /// dropout rate, which the protocol ties to the weight precision).
    pub weight_precision: f64,
}

impl ModelFamily for DropoutFamily {
    fn name(&self) -> &'static str {
        "MC dropout BNN"
    }

    fn cells(&self, grid: &HyperGrid) -> Vec<HyperCell> {
        let mut cells = Vec::new();
        for arch in &grid.architectures {
            for &rate in &grid.dropout_rates {
                cells.push(HyperCell {
                    architecture: arch.clone(),
                    prior_precision: None,
                    dropout_rate: Some(rate),
                    patience: None,
                });
            }
        }
        cells
    }

    fn fit_predict(
        &self,
        cell: &HyperCell,
        train: &DesignMatrix,
        test_rows: &[Vec<f64>],
        seed: u64,
        _budget: FitBudget,
    ) -> Result<Prediction> {
        let rate = cell
            .dropout_rate
            .ok_or_else(|| Error::InvalidConfig("dropout cell lacks a rate".into()))?;
        let sigma2 = bayes::estimate_noise_variance(train, bayes::RIDGE_ALPHA);
        let spec = BayesSpec::tied(self.weight_precision, sigma2, &cell.architecture)?;
        let config = DropoutConfig::new(
            rate,
            self.t_samples,
            self.train.epochs,
            self.train.learning_rate,
            self.train.batch_size.min(train.n()),
            seed,
        )?;
        let params = dropout::train(&cell.architecture, &spec, train, &config)?;
        let pred = dropout::predict(&cell.architecture, &spec, &params, test_rows, &config)?;
        Ok(Prediction::Posterior(pred))
    }
}

pub struct BaselineFamily {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub validation_fraction: f64,
    pub max_epochs: usize,
}

impl ModelFamily for BaselineFamily {
    fn name(&self) -> &'static str {
        "NN"
    }

    fn cells(&self, grid: &HyperGrid) -> Vec<HyperCell> {
        let mut cells = Vec::new();
        for arch in &grid.architectures {
            for &rate in &grid.dropout_rates {
                for &patience in &grid.early_stop_patiences {
                    cells.push(HyperCell {
                        architecture: arch.clone(),
                        prior_precision: None,
                        dropout_rate: Some(rate),
                        patience: Some(patience),
                    });
                }
            }
        }
        cells
    }

    fn fit_predict(
        &self,
        cell: &HyperCell,
        train: &DesignMatrix,
        test_rows: &[Vec<f64>],
        seed: u64,
        _budget: FitBudget,
    ) -> Result<Prediction> {
        let rate = cell
            .dropout_rate
            .ok_or_else(|| Error::InvalidConfig("baseline cell lacks a dropout rate".into()))?;
        let patience = cell
            .patience
            .ok_or_else(|| Error::InvalidConfig("baseline cell lacks a patience".into()))?;
        let opt = OptimizerConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
        };
        let stop = EarlyStopConfig::new(
            patience.min(self.max_epochs),
            self.validation_fraction,
            self.max_epochs,
        )?;
        let outcome = baseline::train(&cell.architecture, train, rate, &opt, &stop, seed)?;
        let preds = baseline::predict(&cell.architecture, &outcome.params, test_rows)?;
        Ok(Prediction::Point(preds))
    }
}

/// Grid-search outcome: the winner plus per-cell bookkeeping.
#[derive(Debug, Clone)]
pub struct GridSearchOutcome {
    pub selected: HyperCell,
    pub selected_index: usize,
    /// Mean inner-validation MSE per cell (`None` = the cell failed).
    pub scores: Vec<Option<f64>>,
    pub cells: Vec<HyperCell>,
}

/// `true` when candidate `a` beats incumbent `b` under the tie-break chain:
/// score, parameter count, smaller dropout, larger precision, grid order.
fn cell_beats(score_a: f64, a: &HyperCell, score_b: f64, b: &HyperCell) -> bool {
    if score_a != score_b {
        return score_a < score_b;
    }
    let (pa, pb) = (
        a.architecture.parameter_count(),
        b.architecture.parameter_count(),
    );
    if pa != pb {
        return pa < pb;
    }
    if let (Some(ra), Some(rb)) = (a.dropout_rate, b.dropout_rate) {
        if ra != rb {
            return ra < rb;
        }
    }
    if let (Some(la), Some(lb)) = (a.prior_precision, b.prior_precision) {
        if la != lb {
            return la > lb;
        }
    }
    false // grid order: the earlier cell stays
}

/// Per-split projected data, shared by every cell of every family.
pub(crate) struct ProjectedSplit {
    pub train: DesignMatrix,
    pub test_rows: Vec<Vec<f64>>,
    pub test_targets: Vec<f64>,
}

pub(crate) fn project_split(
    data: &DesignMatrix,
    train_idx: &[usize],
    test_idx: &[usize],
    pca_k: usize,
) -> Result<ProjectedSplit> {
    let train = data.subset(train_idx);
    let test = data.subset(test_idx);
    let pre = Preprocessor::fit(train.rows(), pca_k)?;
    let projected_train =
        DesignMatrix::new(pre.transform(train.rows())?, train.targets().to_vec())?;
    let test_rows = pre.transform(test.rows())?;
    Ok(ProjectedSplit {
        train: projected_train,
        test_rows,
        test_targets: test.targets().to_vec(),
    })
}

/// Selects the grid cell with minimal mean inner-validation MSE for one
/// outer fold. Preprocessing is refit on each inner training split; every
/// fit derives its RNG stream from `(master seed, family, fold, cell,
/// split)`, so results are independent of scheduling.
pub fn grid_search(
    family: &dyn ModelFamily,
    fold: usize,
    plan: &FoldPlan,
    grid: &HyperGrid,
    data: &DesignMatrix,
    pca_k: usize,
    master_seed: u64,
) -> Result<GridSearchOutcome> {
    let cells = family.cells(grid);
    if cells.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "family {} produced no grid cells",
            family.name()
        )));
    }
    let splits: Vec<ProjectedSplit> = (0..INNER_FOLDS)
        .map(|j| {
            let (train_idx, val_idx) = plan.inner_split(fold, j);
            project_split(data, &train_idx, val_idx, pca_k)
        })
        .collect::<Result<Vec<_>>>()?;

    let tasks: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..INNER_FOLDS).map(move |j| (c, j)))
        .collect();
    let results: Vec<Result<f64>> = tasks
        .par_iter()
        .map(|&(c, j)| {
            let split = &splits[j];
            let seed = seeding::mix(&[
                master_seed,
                seeding::label(family.name()),
                fold as u64,
                c as u64,
                j as u64,
            ]);
            let pred =
                family.fit_predict(&cells[c], &split.train, &split.test_rows, seed, FitBudget::Inner)?;
            metrics::mse(&split.test_targets, pred.point_estimates())
        })
        .collect();

    let mut scores: Vec<Option<f64>> = Vec::with_capacity(cells.len());
    let mut failures: Vec<String> = Vec::new();
    for c in 0..cells.len() {
        let mut total = 0.0;
        let mut failed = None;
        for j in 0..INNER_FOLDS {
            match &results[c * INNER_FOLDS + j] {
                Ok(v) => total += v,
                Err(e) => {
                    failed = Some(format!("cell {c} ({}): {e}", cells[c].describe()));
                    break;
                }
            }
        }
        match failed {
            Some(msg) => {
                failures.push(msg);
                scores.push(None);
            }
            None => scores.push(Some(total / INNER_FOLDS as f64)),
        }
    }

    let mut best: Option<usize> = None;
    for (c, score) in scores.iter().enumerate() {
        let Some(s) = score else { continue };
        match best {
            None => best = Some(c),
            Some(b) => {
                if cell_beats(*s, &cells[c], scores[b].unwrap(), &cells[b]) {
                    best = Some(c);
                }
            }
        }
    }
    let Some(selected_index) = best else {
        return Err(Error::AllCellsFailed(failures.join("; ")));
    };
    Ok(GridSearchOutcome {
        selected: cells[selected_index].clone(),
        selected_index,
        scores,
        cells,
    })
}
