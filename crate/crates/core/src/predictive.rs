//! Predictive distributions assembled from function samples.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-test-point predictive mean and variance, plus the raw function samples
/// they were computed from (`samples[s][i]` = draw `s` evaluated at point `i`).
///
/// The variance is `noise_variance + sample variance` of the function draws,
/// with the unbiased (S - 1) estimator and the singleton convention that one
/// draw has zero sample variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDistribution {
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    pub samples: Vec<Vec<f64>>,
}

impl PredictiveDistribution {
    pub fn from_function_samples(samples: Vec<Vec<f64>>, noise_variance: f64) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyChain);
        }
        let n_points = samples[0].len();
        for (s, row) in samples.iter().enumerate() {
            if row.len() != n_points {
                return Err(Error::RowDimensionMismatch {
                    row: s,
                    expected: n_points,
                    actual: row.len(),
                });
            }
        }
        let s_count = samples.len() as f64;
        let mut means = vec![0.0; n_points];
        for row in &samples {
            for (m, &v) in means.iter_mut().zip(row) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= s_count;
        }
        let mut variances = vec![noise_variance; n_points];
        if samples.len() > 1 {
            for row in &samples {
                for (i, &v) in row.iter().enumerate() {
                    let d = v - means[i];
                    variances[i] += d * d / (s_count - 1.0);
                }
            }
        }
        Ok(Self {
            means,
            variances,
            samples,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.means.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.means.is_empty()
    }
}
