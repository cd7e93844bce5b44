//! Non-Bayesian reference model: dropout-regularized training with early
//! stopping on a held-out validation split, point predictions only.
//!
//! Training shares the Adam/dropout path with the MC-dropout model (mask at
//! train time only, zero weight decay), so the comparison isolates test-time
//! behaviour. The validation split is stratified by target quartile to keep
//! small-N validation sets representative.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{self, Architecture, DesignMatrix, ParamVector};
use crate::optim::DropoutSgd;
use crate::seeding;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopConfig {
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Fraction of the training data held out for validation.
    pub validation_fraction: f64,
    pub max_epochs: usize,
}

impl EarlyStopConfig {
    pub fn new(patience: usize, validation_fraction: f64, max_epochs: usize) -> Result<Self> {
        let cfg = Self {
            patience,
            validation_fraction,
            max_epochs,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.patience == 0 {
            return Err(Error::InvalidConfig("patience must be >= 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidConfig("max_epochs must be >= 1".into()));
        }
        if self.patience > self.max_epochs {
            return Err(Error::InvalidConfig(format!(
                "patience ({}) must not exceed max_epochs ({})",
                self.patience, self.max_epochs
            )));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "validation_fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Optimizer settings shared with the dropout training path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Result of an early-stopped training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the best validation epoch.
    pub params: ParamVector,
    /// Number of completed epochs when training stopped.
    pub stopped_epoch: usize,
    /// Epoch (1-based) that achieved the minimum validation MSE.
    pub best_epoch: usize,
    /// Validation MSE after each completed epoch.
    pub validation_trace: Vec<f64>,
}

/// Validation indices: a seeded, target-quartile-stratified draw of
/// `floor(fraction * n)` rows.
fn stratified_validation_split(
    data: &DesignMatrix,
    fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let n = data.n();
    let n_val = (fraction * n as f64).floor() as usize;
    if n_val == 0 || n_val == n {
        return Err(Error::EmptyValidationSplit { n, fraction });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        data.targets()[a]
            .partial_cmp(&data.targets()[b])
            .unwrap()
            .then(a.cmp(&b))
    });
    // Four contiguous quartile buckets over the sorted order.
    let mut buckets: Vec<Vec<usize>> = Vec::with_capacity(4);
    let base = n / 4;
    let extra = n % 4;
    let mut start = 0;
    for q in 0..4 {
        let len = base + usize::from(q < extra);
        buckets.push(order[start..start + len].to_vec());
        start += len;
    }
    // Proportional allocation by largest remainder.
    let mut counts: Vec<usize> = buckets
        .iter()
        .map(|b| (fraction * b.len() as f64).floor() as usize)
        .collect();
    let mut remainders: Vec<(usize, f64)> = buckets
        .iter()
        .enumerate()
        .map(|(q, b)| (q, fraction * b.len() as f64 - counts[q] as f64))
        .collect();
    remainders.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    let mut short = n_val.saturating_sub(counts.iter().sum::<usize>());
    for &(q, _) in &remainders {
        if short == 0 {
            break;
        }
        if counts[q] < buckets[q].len() {
            counts[q] += 1;
            short -= 1;
        }
    }
    let mut rng = seeding::rng_for(&[seed, seeding::label("early-stop-split")]);
    let mut val = Vec::with_capacity(n_val);
    for (bucket, &count) in buckets.iter_mut().zip(&counts) {
        bucket.shuffle(&mut rng);
        val.extend_from_slice(&bucket[..count]);
    }
    val.sort_unstable();
    let in_val: Vec<bool> = {
        let mut flags = vec![false; n];
        for &i in &val {
            flags[i] = true;
        }
        flags
    };
    let train: Vec<usize> = (0..n).filter(|&i| !in_val[i]).collect();
    Ok((train, val))
}

/// Trains with dropout at train time only and stops when validation MSE has
/// not improved for `patience` epochs. Returns the parameters from the best
/// validation epoch.
pub fn train(
    arch: &Architecture,
    data: &DesignMatrix,
    dropout_rate: f64,
    opt: &OptimizerConfig,
    stop: &EarlyStopConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    opt.validate()?;
    stop.validate()?;
    let (train_idx, val_idx) =
        stratified_validation_split(data, stop.validation_fraction, seed)?;
    let train_data = data.subset(&train_idx);
    let val_data = data.subset(&val_idx);

    let batch_size = opt.batch_size.min(train_data.n());
    let decay = vec![0.0; arch.num_layers()];
    let mut sgd = DropoutSgd::new(
        arch,
        &train_data,
        dropout_rate,
        decay,
        opt.learning_rate,
        batch_size,
        seed,
    )?;

    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut best_params: Vec<f64> = sgd.values().to_vec();
    let mut since_improvement = 0;
    let mut trace = Vec::new();
    let mut stopped_epoch = 0;

    for epoch in 1..=stop.max_epochs {
        sgd.run_epoch()?;
        stopped_epoch = epoch;
        // Validation uses the deterministic, unmasked forward pass.
        let params = ParamVector::from_values(arch, sgd.values().to_vec())?;
        let preds = net::forward_batch(arch, &params, val_data.rows())?;
        let val_mse = preds
            .iter()
            .zip(val_data.targets())
            .map(|(p, y)| (p - y) * (p - y))
            .sum::<f64>()
            / val_data.n() as f64;
        trace.push(val_mse);
        if val_mse < best_val {
            best_val = val_mse;
            best_epoch = epoch;
            best_params.copy_from_slice(sgd.values());
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= stop.patience {
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: ParamVector::from_values(arch, best_params)?,
        stopped_epoch,
        best_epoch,
        validation_trace: trace,
    })
}

/// Deterministic point predictions; identical to the plain forward map, with
/// no test-time dropout and no variance attached.
pub fn predict(arch: &Architecture, params: &ParamVector, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
    net::forward_batch(arch, params, rows)
}
