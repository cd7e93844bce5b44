//! Feature normalization and PCA projection, fitted on training rows only.
//!
//! `fit_scaler` centers and scales columns (population convention); constant
//! columns get unit standard deviation so they map to zero. `fit_pca` takes
//! the top-k right singular directions of the centered matrix with a
//! deterministic sign convention: the largest-magnitude coordinate of each
//! component is positive.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Scaler {
    pub fn transform_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.means.len() {
            return Err(Error::DimensionMismatch {
                context: "scaler input",
                expected: self.means.len(),
                actual: row.len(),
            });
        }
        Ok(row
            .iter()
            .zip(self.means.iter().zip(&self.stds))
            .map(|(x, (m, s))| (x - m) / s)
            .collect())
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        rows.iter().map(|r| self.transform_row(r)).collect()
    }
}

/// Column means and population standard deviations of the training rows.
/// Columns with zero spread get std 1 (they carry no information and map to
/// exactly zero after centering).
pub fn fit_scaler(rows: &[Vec<f64>]) -> Result<Scaler> {
    let n = rows.len();
    if n < 2 {
        return Err(Error::TooFewRows {
            context: "fit_scaler",
            required: 2,
            actual: n,
        });
    }
    let d = rows[0].len();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != d {
            return Err(Error::RowDimensionMismatch {
                row: i,
                expected: d,
                actual: row.len(),
            });
        }
    }
    let mut means = vec![0.0; d];
    for row in rows {
        for (m, &x) in means.iter_mut().zip(row) {
            *m += x;
        }
    }
    for m in &mut means {
        *m /= n as f64;
    }
    let mut stds = vec![0.0; d];
    for row in rows {
        for (s, (&x, &m)) in stds.iter_mut().zip(row.iter().zip(&means)) {
            let dev = x - m;
            *s += dev * dev;
        }
    }
    for s in &mut stds {
        *s = (*s / n as f64).sqrt();
        if *s == 0.0 {
            *s = 1.0;
        }
    }
    Ok(Scaler { means, stds })
}

/// Orthonormal projection onto the top-k principal directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    /// K x D, rows orthonormal, sorted by explained variance (descending).
    pub components: Vec<Vec<f64>>,
    /// Population variance captured by each component, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Column means of the matrix the projection was fitted on.
    pub center: Vec<f64>,
    pub k: usize,
}

/// Top-k principal directions of `x_scaled` via singular value
/// decomposition of the centered matrix.
pub fn fit_pca(x_scaled: &[Vec<f64>], k: usize) -> Result<PcaProjection> {
    let n = x_scaled.len();
    if n < 2 {
        return Err(Error::TooFewRows {
            context: "fit_pca",
            required: 2,
            actual: n,
        });
    }
    let d = x_scaled[0].len();
    let max_k = (n - 1).min(d);
    if k == 0 || k > max_k {
        return Err(Error::InvalidComponentCount { k, n, d, max: max_k });
    }
    let mut center = vec![0.0; d];
    for row in x_scaled {
        if row.len() != d {
            return Err(Error::RowDimensionMismatch {
                row: 0,
                expected: d,
                actual: row.len(),
            });
        }
        for (c, &x) in center.iter_mut().zip(row) {
            *c += x;
        }
    }
    for c in &mut center {
        *c /= n as f64;
    }
    let mut centered = DMatrix::<f64>::zeros(n, d);
    for (i, row) in x_scaled.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            centered[(i, j)] = x - center[j];
        }
    }
    let svd = centered.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::InvalidConfig("SVD did not return right singular vectors".into()))?;

    // Order singular values descending (defensive; nalgebra sorts already).
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| {
        svd.singular_values[b]
            .partial_cmp(&svd.singular_values[a])
            .unwrap()
            .then(a.cmp(&b))
    });

    let mut components = Vec::with_capacity(k);
    let mut explained_variance = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut comp: Vec<f64> = (0..d).map(|j| v_t[(idx, j)]).collect();
        // Sign convention: largest-magnitude coordinate positive; ties break
        // toward the lowest index.
        let pivot = comp
            .iter()
            .enumerate()
            .max_by(|a, b| {
                a.1.abs()
                    .partial_cmp(&b.1.abs())
                    .unwrap()
                    .then(b.0.cmp(&a.0))
            })
            .map(|(j, _)| j)
            .unwrap();
        if comp[pivot] < 0.0 {
            for c in &mut comp {
                *c = -*c;
            }
        }
        components.push(comp);
        let s = svd.singular_values[idx];
        explained_variance.push(s * s / n as f64);
    }
    Ok(PcaProjection {
        components,
        explained_variance,
        center,
        k,
    })
}

impl PcaProjection {
    /// `(x - center) . components^T` for one already-scaled row.
    pub fn project_row(&self, row: &[f64]) -> Result<Vec<f64>> {
        if row.len() != self.center.len() {
            return Err(Error::DimensionMismatch {
                context: "pca input",
                expected: self.center.len(),
                actual: row.len(),
            });
        }
        Ok(self
            .components
            .iter()
            .map(|comp| {
                comp.iter()
                    .zip(row.iter().zip(&self.center))
                    .map(|(c, (x, m))| c * (x - m))
                    .sum()
            })
            .collect())
    }
}

/// Scales then projects rows with statistics fitted on training data;
/// applied identically to train and held-out rows.
pub fn transform(scaler: &Scaler, pca: &PcaProjection, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    rows.iter()
        .map(|r| pca.project_row(&scaler.transform_row(r)?))
        .collect()
}

/// Scaler plus projection fitted together on the same training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    pub scaler: Scaler,
    pub pca: PcaProjection,
}

impl Preprocessor {
    pub fn fit(train_rows: &[Vec<f64>], k: usize) -> Result<Self> {
        let scaler = fit_scaler(train_rows)?;
        let scaled = scaler.transform(train_rows)?;
        let pca = fit_pca(&scaled, k)?;
        Ok(Self { scaler, pca })
    }

    pub fn transform(&self, rows: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        transform(&self.scaler, &self.pca, rows)
    }
}
