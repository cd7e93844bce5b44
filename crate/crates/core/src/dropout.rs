//! MC dropout: Bernoulli unit-dropping at train and test time.
//!
//! Inverted dropout is used throughout — kept hidden activations are rescaled
//! by `1/(1 - rate)` — so rate 0 degenerates exactly to the plain network.
//! Masks apply to hidden-layer activations only; the PCA inputs stay intact.
//!
//! Training minimizes `MSE + sum_l (lambda_l sigma^2 / N) ||w_l||^2`, tying
//! the weight-decay strength to the prior precision and noise variance.
//! Prediction draws `T` fresh masks and reports the mean, the noise variance
//! plus the across-mask sample variance, and the raw mask outputs.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bayes::BayesSpec;
use crate::error::{Error, Result};
use crate::net::{self, Architecture, DesignMatrix, MaskView, ParamVector, Workspace};
use crate::optim::DropoutSgd;
use crate::predictive::PredictiveDistribution;
use crate::seeding;

pub const MAX_DROPOUT_RATE: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DropoutConfig {
    /// Probability that a hidden unit is dropped.
    pub dropout_rate: f64,
    /// Test-time forward passes.
    pub t_samples: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl DropoutConfig {
    pub fn new(
        dropout_rate: f64,
        t_samples: usize,
        epochs: usize,
        learning_rate: f64,
        batch_size: usize,
        seed: u64,
    ) -> Result<Self> {
        let cfg = Self {
            dropout_rate,
            t_samples,
            epochs,
            learning_rate,
            batch_size,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        check_rate(self.dropout_rate)?;
        if self.t_samples == 0 {
            return Err(Error::InvalidConfig("t_samples must be >= 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
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

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=MAX_DROPOUT_RATE).contains(&rate) {
        return Err(Error::InvalidConfig(format!(
            "dropout_rate must lie in [0, {MAX_DROPOUT_RATE}], got {rate}"
        )));
    }
    Ok(())
}

/// Per-hidden-layer keep flags (`true` = kept) with the rate they were drawn
/// at; kept units are rescaled by `1/(1 - rate)` in the masked forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    keep: Vec<Vec<bool>>,
    rate: f64,
}

impl DropoutMask {
    pub fn draw<R: Rng + ?Sized>(arch: &Architecture, rate: f64, rng: &mut R) -> Result<Self> {
        check_rate(rate)?;
        let keep = arch
            .hidden_layers()
            .iter()
            .map(|&w| (0..w).map(|_| rng.random::<f64>() >= rate).collect())
            .collect();
        Ok(Self { keep, rate })
    }

    /// Everything kept at rate 0 (the deterministic limit).
    pub fn all_kept(arch: &Architecture) -> Self {
        Self {
            keep: arch.hidden_layers().iter().map(|&w| vec![true; w]).collect(),
            rate: 0.0,
        }
    }

    /// Explicit flags, for enumeration oracles and tests.
    pub fn from_flags(arch: &Architecture, keep: Vec<Vec<bool>>, rate: f64) -> Result<Self> {
        check_rate(rate)?;
        let mask = Self { keep, rate };
        mask.check_shape(arch)?;
        Ok(mask)
    }

    #[inline]
    pub fn keep(&self) -> &[Vec<bool>] {
        &self.keep
    }

    #[inline]
    pub fn rate(&self) -> f64 {
        self.rate
    }

    #[inline]
    pub fn scale(&self) -> f64 {
        1.0 / (1.0 - self.rate)
    }

    fn check_shape(&self, arch: &Architecture) -> Result<()> {
        let widths: Vec<usize> = self.keep.iter().map(Vec::len).collect();
        if widths != arch.hidden_layers() {
            return Err(Error::LayoutMismatch(format!(
                "mask widths {widths:?} do not match hidden layers {:?}",
                arch.hidden_layers()
            )));
        }
        Ok(())
    }

    pub(crate) fn view(&self) -> MaskView<'_> {
        MaskView {
            keep: &self.keep,
            scale: self.scale(),
        }
    }
}

/// Forward pass with dropped units zeroed and kept activations rescaled.
pub fn masked_forward(
    arch: &Architecture,
    params: &ParamVector,
    mask: &DropoutMask,
    x: &[f64],
) -> Result<f64> {
    mask.check_shape(arch)?;
    if params.layout() != arch.layout() {
        return Err(Error::LayoutMismatch(
            "masked_forward: parameter layout does not match the architecture".into(),
        ));
    }
    if x.len() != arch.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "masked_forward input",
            expected: arch.input_dim(),
            actual: x.len(),
        });
    }
    let mut ws = Workspace::new(arch);
    Ok(net::forward_ws(
        arch,
        params.values(),
        x,
        Some(mask.view()),
        &mut ws,
    ))
}

/// Trains with a fresh mask per example per step. The weight-decay
/// coefficient for layer `l` is `lambda_l sigma^2 / N`.
pub fn train(
    arch: &Architecture,
    spec: &BayesSpec,
    data: &DesignMatrix,
    config: &DropoutConfig,
) -> Result<ParamVector> {
    config.validate()?;
    if spec.layer_precisions().len() != arch.num_layers() {
        return Err(Error::LayoutMismatch(format!(
            "{} layer precisions for a {}-layer network",
            spec.layer_precisions().len(),
            arch.num_layers()
        )));
    }
    let n = data.n() as f64;
    let decay: Vec<f64> = spec
        .layer_precisions()
        .iter()
        .map(|l| l * spec.noise_variance() / n)
        .collect();
    let mut sgd = DropoutSgd::new(
        arch,
        data,
        config.dropout_rate,
        decay,
        config.learning_rate,
        config.batch_size,
        config.seed,
    )?;
    for _ in 0..config.epochs {
        sgd.run_epoch()?;
    }
    ParamVector::from_values(arch, sgd.values().to_vec())
}

/// Predictive distribution from `T` independent masks. Each mask draws from
/// its own RNG stream derived from `(seed, mask index)`, so evaluating masks
/// concurrently or sequentially gives identical results.
pub fn predict(
    arch: &Architecture,
    spec: &BayesSpec,
    params: &ParamVector,
    x_test: &[Vec<f64>],
    config: &DropoutConfig,
) -> Result<PredictiveDistribution> {
    config.validate()?;
    for (i, row) in x_test.iter().enumerate() {
        if row.len() != arch.input_dim() {
            return Err(Error::RowDimensionMismatch {
                row: i,
                expected: arch.input_dim(),
                actual: row.len(),
            });
        }
    }
    let mut ws = Workspace::new(arch);
    let mut samples = Vec::with_capacity(config.t_samples);
    for s in 0..config.t_samples {
        let mut mask_rng = seeding::rng_for(&[
            config.seed,
            seeding::label("dropout-predict"),
            s as u64,
        ]);
        let mask = DropoutMask::draw(arch, config.dropout_rate, &mut mask_rng)?;
        let view = mask.view();
        let outputs: Vec<f64> = x_test
            .iter()
            .map(|row| net::forward_ws(arch, params.values(), row, Some(view), &mut ws))
            .collect();
        samples.push(outputs);
    }
    PredictiveDistribution::from_function_samples(samples, spec.noise_variance())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::Activation;
    use crate::seeding::rng_for;

    fn tiny_net() -> (Architecture, ParamVector) {
        let arch = Architecture::new(3, vec![2], Activation::Tanh).unwrap();
        let mut rng = rng_for(&[301]);
        let params = ParamVector::init(&arch, &mut rng);
        (arch, params)
    }

    #[test]
    fn all_kept_rate_zero_equals_plain_forward() {
        let (arch, params) = tiny_net();
        let mask = DropoutMask::all_kept(&arch);
        let x = [0.4, -1.1, 0.9];
        let masked = masked_forward(&arch, &params, &mask, &x).unwrap();
        let plain = net::forward(&arch, &params, &x).unwrap();
        assert_eq!(masked, plain);
    }

    #[test]
    fn all_dropped_returns_output_bias() {
        let (arch, params) = tiny_net();
        let mask = DropoutMask::from_flags(&arch, vec![vec![false, false]], 0.5).unwrap();
        let y = masked_forward(&arch, &params, &mask, &[1.0, 2.0, 3.0]).unwrap();
        // Output layer is the last; its bias sits at the end of the vector.
        let bias = *params.values().last().unwrap();
        assert_eq!(y, bias);
    }

    #[test]
    fn random_mask_matches_manual_composition() {
        // 3-2-1 net: zero/rescale hidden activations by hand and push through
        // the output layer.
        let (arch, params) = tiny_net();
        let mask = DropoutMask::from_flags(&arch, vec![vec![true, false]], 0.25).unwrap();
        let x = [0.2, 0.5, -0.8];
        let got = masked_forward(&arch, &params, &mask, &x).unwrap();

        let v = params.values();
        let scale = 1.0 / (1.0 - 0.25);
        // Hidden layer: weights at 0..6 (2x3 row-major), biases at 6..8.
        let mut h = [0.0f64; 2];
        for o in 0..2 {
            let mut z = v[6 + o];
            for i in 0..3 {
                z += v[o * 3 + i] * x[i];
            }
            h[o] = z.tanh();
        }
        let kept = [h[0] * scale, 0.0];
        // Output layer: weights at 8..10, bias at 10.
        let expected = v[10] + v[8] * kept[0] + v[9] * kept[1];
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn mask_shape_mismatch_rejected() {
        let (arch, params) = tiny_net();
        let err = DropoutMask::from_flags(&arch, vec![vec![true]], 0.5);
        assert!(err.is_err());
        let other_arch = Architecture::new(3, vec![4], Activation::Tanh).unwrap();
        let mask = DropoutMask::all_kept(&other_arch);
        assert!(masked_forward(&arch, &params, &mask, &[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn train_recovers_linear_slope_at_rate_zero() {
        // y = 2x on an affine net: the learned weight lands within 1e-2 of 2.
        let arch = Architecture::new(1, vec![], Activation::Tanh).unwrap();
        let spec = BayesSpec::tied(1.0, 0.01, &arch).unwrap();
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![(i as f64 - 9.5) / 10.0]).collect();
        let targets: Vec<f64> = rows.iter().map(|r| 2.0 * r[0]).collect();
        let data = DesignMatrix::new(rows, targets).unwrap();
        let config = DropoutConfig::new(0.0, 1, 800, 1e-2, 20, 11).unwrap();
        let params = train(&arch, &spec, &data, &config).unwrap();
        assert!(
            (params.values()[0] - 2.0).abs() < 1e-2,
            "slope {}",
            params.values()[0]
        );
        assert!(params.values()[1].abs() < 1e-2, "bias {}", params.values()[1]);
    }

    #[test]
    fn train_is_deterministic_in_seed() {
        let arch = Architecture::new(2, vec![3], Activation::Tanh).unwrap();
        let spec = BayesSpec::tied(1.0, 0.5, &arch).unwrap();
        let mut rng = rng_for(&[317]);
        let rows: Vec<Vec<f64>> = (0..12)
            .map(|_| {
                vec![
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                    rng.sample::<f64, _>(rand_distr::StandardNormal),
                ]
            })
            .collect();
        let targets: Vec<f64> = rows.iter().map(|r| r[0] - r[1]).collect();
        let data = DesignMatrix::new(rows, targets).unwrap();
        let config = DropoutConfig::new(0.3, 1, 25, 1e-2, 4, 2024).unwrap();
        let a = train(&arch, &spec, &data, &config).unwrap();
        let b = train(&arch, &spec, &data, &config).unwrap();
        assert_eq!(a.values(), b.values());
    }

    #[test]
    fn training_loss_mostly_non_increasing_rate_zero_linear() {
        let arch = Architecture::new(1, vec![], Activation::Tanh).unwrap();
        let rows: Vec<Vec<f64>> = (0..16).map(|i| vec![(i as f64 - 7.5) / 8.0]).collect();
        let targets: Vec<f64> = rows.iter().map(|r| 2.0 * r[0] + 0.5).collect();
        let data = DesignMatrix::new(rows, targets).unwrap();
        let mut sgd =
            crate::optim::DropoutSgd::new(&arch, &data, 0.0, vec![0.0], 1e-2, 16, 3).unwrap();
        let losses: Vec<f64> = (0..100).map(|_| sgd.run_epoch().unwrap()).collect();
        let non_increasing = losses
            .windows(2)
            .filter(|w| w[1] <= w[0] + 1e-12)
            .count();
        assert!(
            non_increasing as f64 >= 0.9 * (losses.len() - 1) as f64,
            "{non_increasing}/{} transitions non-increasing",
            losses.len() - 1
        );
    }

    #[test]
    fn predict_rate_zero_is_deterministic() {
        let (arch, params) = tiny_net();
        let spec = BayesSpec::tied(1.0, 0.64, &arch).unwrap();
        let config = DropoutConfig::new(0.0, 7, 1, 1e-2, 1, 5).unwrap();
        let x = vec![vec![0.3, 0.1, -0.2], vec![1.0, 1.0, 1.0]];
        let pred = predict(&arch, &spec, &params, &x, &config).unwrap();
        for s in 1..pred.samples.len() {
            assert_eq!(pred.samples[s], pred.samples[0]);
        }
        assert_eq!(pred.variances, vec![0.64, 0.64]);
        let plain = net::forward_batch(&arch, &params, &x).unwrap();
        assert_eq!(pred.samples[0], plain);
        for (m, p) in pred.means.iter().zip(&plain) {
            assert!((m - p).abs() < 1e-15);
        }
    }

    #[test]
    fn predict_t_one_variance_is_noise_only() {
        let (arch, params) = tiny_net();
        let spec = BayesSpec::tied(1.0, 0.36, &arch).unwrap();
        let config = DropoutConfig::new(0.5, 1, 1, 1e-2, 1, 5).unwrap();
        let pred = predict(&arch, &spec, &params, &[vec![0.1, 0.2, 0.3]], &config).unwrap();
        assert_eq!(pred.variances, vec![0.36]);
    }

    #[test]
    fn predict_variance_never_below_noise() {
        let (arch, params) = tiny_net();
        let spec = BayesSpec::tied(1.0, 0.2, &arch).unwrap();
        let config = DropoutConfig::new(0.5, 50, 1, 1e-2, 1, 6).unwrap();
        let x: Vec<Vec<f64>> = (0..10)
            .map(|i| vec![i as f64 / 10.0, -(i as f64) / 5.0, 0.3])
            .collect();
        let pred = predict(&arch, &spec, &params, &x, &config).unwrap();
        assert!(pred.variances.iter().all(|&v| v >= 0.2));
    }

    #[test]
    fn predict_is_deterministic_in_seed() {
        let (arch, params) = tiny_net();
        let spec = BayesSpec::tied(1.0, 1.0, &arch).unwrap();
        let config = DropoutConfig::new(0.4, 64, 1, 1e-2, 1, 77).unwrap();
        let x = vec![vec![0.5, -0.5, 0.25]];
        let a = predict(&arch, &spec, &params, &x, &config).unwrap();
        let b = predict(&arch, &spec, &params, &x, &config).unwrap();
        assert_eq!(a, b);
    }

    /// Exact mean over all 2^(hidden units) masks, weighted by the Bernoulli
    /// probability of each keep pattern.
    fn enumerate_mask_mean(
        arch: &Architecture,
        params: &ParamVector,
        rate: f64,
        x: &[f64],
    ) -> f64 {
        let widths: Vec<usize> = arch.hidden_layers().to_vec();
        let total: usize = widths.iter().sum();
        assert!(total <= 10);
        let mut mean = 0.0;
        for bits in 0..(1usize << total) {
            let mut flags = Vec::new();
            let mut cursor = 0;
            let mut kept = 0usize;
            for &w in &widths {
                let layer: Vec<bool> = (0..w)
                    .map(|j| {
                        let keep = (bits >> (cursor + j)) & 1 == 1;
                        if keep {
                            kept += 1;
                        }
                        keep
                    })
                    .collect();
                cursor += w;
                flags.push(layer);
            }
            let mask = DropoutMask::from_flags(arch, flags, rate).unwrap();
            let weight =
                (1.0 - rate).powi(kept as i32) * rate.powi((total - kept) as i32);
            mean += weight * masked_forward(arch, params, &mask, x).unwrap();
        }
        mean
    }

    #[test]
    fn mc_mean_matches_exhaustive_enumeration() {
        // Rate 0.5 on a fixed small net: the T-sample MC mean lands within
        // 3 standard errors of the exact enumeration average.
        let arch = Architecture::new(2, vec![3, 2], Activation::Tanh).unwrap();
        let mut rng = rng_for(&[331]);
        let params = ParamVector::init(&arch, &mut rng);
        let spec = BayesSpec::tied(1.0, 1.0, &arch).unwrap();
        let x = vec![vec![0.7, -0.4]];
        let t = 10_000;
        let config = DropoutConfig::new(0.5, t, 1, 1e-2, 1, 13).unwrap();
        let pred = predict(&arch, &spec, &params, &x, &config).unwrap();
        let exact = enumerate_mask_mean(&arch, &params, 0.5, &x[0]);
        let outputs: Vec<f64> = pred.samples.iter().map(|s| s[0]).collect();
        let sd = {
            let m = pred.means[0];
            (outputs.iter().map(|o| (o - m) * (o - m)).sum::<f64>() / (t as f64 - 1.0)).sqrt()
        };
        let se = sd / (t as f64).sqrt();
        assert!(
            (pred.means[0] - exact).abs() < 3.0 * se,
            "MC mean {} vs exact {exact} (SE {se})",
            pred.means[0]
        );
    }
}
