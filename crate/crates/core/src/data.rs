//! CSV ingestion, the synthetic cohort generator, and report persistence.
//!
//! CSV schema: `id,target,f0001,...,fD` with a mandatory header row. Cells
//! are parsed as strict decimals (locale separators are invalid); non-finite
//! values are rejected with their row/column coordinates.
//!
//! The real cohort behind the protocol is private, so a seeded generator
//! stands in: features carry a planted low-dimensional latent signal (making
//! the PCA step a correct model of the synthetic world) and targets are an
//! affine function of the latent factors, rescaled to the published score
//! mean and spread and clipped to the score range.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{CsvError, Error, Result};
use crate::eval::report::CvReport;
use crate::net::DesignMatrix;
use crate::seeding;

/// Score range of the regression target (clinical cognition scale).
pub const TARGET_MIN: f64 = 0.0;
pub const TARGET_MAX: f64 = 30.0;

/// Rows paired with their id column.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvDataset {
    pub ids: Vec<String>,
    pub data: DesignMatrix,
}

/// Loads `id,target,features...`; the id column is kept for reporting but
/// ignored for modeling.
pub fn load_csv(path: impl AsRef<Path>) -> Result<CsvDataset> {
    let text = fs::read_to_string(path)?;
    parse_csv(&text)
}

pub fn parse_csv(text: &str) -> Result<CsvDataset> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, header)) = lines.next() else {
        return Err(CsvError::EmptyFile.into());
    };
    let header_fields: Vec<&str> = header.split(',').collect();
    if header_fields.len() < 2
        || header_fields[0].trim() != "id"
        || header_fields[1].trim() != "target"
    {
        return Err(CsvError::MissingHeader.into());
    }
    let width = header_fields.len();
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (line_idx, line) in lines {
        let row_no = line_idx + 1; // 1-based, counting the header as row 1
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(CsvError::RaggedRow {
                row: row_no,
                expected: width,
                actual: fields.len(),
            }
            .into());
        }
        ids.push(fields[0].trim().to_string());
        let mut parsed = Vec::with_capacity(width - 1);
        for (col_idx, field) in fields[1..].iter().enumerate() {
            let col_no = col_idx + 2;
            let value: f64 = field.trim().parse().map_err(|_| CsvError::NonNumericCell {
                row: row_no,
                col: col_no,
                value: field.trim().to_string(),
            })?;
            if !value.is_finite() {
                return Err(CsvError::NonFiniteCell {
                    row: row_no,
                    col: col_no,
                }
                .into());
            }
            parsed.push(value);
        }
        targets.push(parsed[0]);
        rows.push(parsed[1..].to_vec());
    }
    if rows.is_empty() {
        return Err(CsvError::EmptyFile.into());
    }
    let data = DesignMatrix::new(rows, targets)?;
    Ok(CsvDataset { ids, data })
}

/// Writes the dataset back out in the same schema. Floats use the shortest
/// representation that parses back to the same value, so a write/load cycle
/// is exact.
pub fn write_csv(path: impl AsRef<Path>, ids: &[String], data: &DesignMatrix) -> Result<()> {
    if ids.len() != data.n() {
        return Err(Error::LengthMismatch {
            context: "write_csv ids vs rows",
            left: ids.len(),
            right: data.n(),
        });
    }
    let mut out = String::from("id,target");
    let width = data.dim().to_string().len().max(4);
    for j in 1..=data.dim() {
        let _ = write!(out, ",f{j:0width$}");
    }
    out.push('\n');
    for ((id, row), target) in ids.iter().zip(data.rows()).zip(data.targets()) {
        let _ = write!(out, "{id},{target}");
        for v in row {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Synthetic cohort controls; defaults mirror the published cohort summary
/// (188 patients, 820 markers, target 22.84 +/- 3.70).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CohortSpec {
    pub n_patients: usize,
    pub n_features: usize,
    pub target_mean: f64,
    pub target_sd: f64,
    pub latent_dim: usize,
    /// Noise added to the latent target signal (unit-variance scale).
    pub noise_sd: f64,
    pub seed: u64,
}

impl Default for CohortSpec {
    fn default() -> Self {
        Self {
            n_patients: 188,
            n_features: 820,
            target_mean: 22.84,
            target_sd: 3.70,
            latent_dim: 5,
            noise_sd: 0.5,
            seed: 0,
        }
    }
}

impl CohortSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_patients == 0 || self.n_features == 0 || self.latent_dim == 0 {
            return Err(Error::InvalidConfig(
                "cohort sizes must be positive".into(),
            ));
        }
        if self.latent_dim > self.n_features {
            return Err(Error::InvalidConfig(format!(
                "latent_dim ({}) exceeds n_features ({})",
                self.latent_dim, self.n_features
            )));
        }
        if !(self.target_sd > 0.0) || !(self.noise_sd >= 0.0) {
            return Err(Error::InvalidConfig(
                "target_sd must be positive and noise_sd non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Feature noise relative to the per-feature latent signal.
const FEATURE_NOISE_SD: f64 = 1.0;

/// Draws latent factors, projects them through a random loading matrix to
/// form features, and builds targets as an affine function of the factors,
/// standardized to `(target_mean, target_sd)` and clipped to the score
/// range. Deterministic in the seed.
pub fn generate_cohort(spec: &CohortSpec) -> Result<DesignMatrix> {
    spec.validate()?;
    let mut rng = seeding::rng_for(&[spec.seed, seeding::label("cohort")]);
    let k = spec.latent_dim;
    let loadings: Vec<Vec<f64>> = (0..k)
        .map(|_| {
            (0..spec.n_features)
                .map(|_| rng.sample::<f64, _>(StandardNormal))
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(spec.n_patients);
    let mut raw_targets = Vec::with_capacity(spec.n_patients);
    let beta = 1.0 / (k as f64).sqrt();
    for _ in 0..spec.n_patients {
        let z: Vec<f64> = (0..k).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let mut row = vec![0.0; spec.n_features];
        for (zk, load) in z.iter().zip(&loadings) {
            for (r, l) in row.iter_mut().zip(load) {
                *r += zk * l;
            }
        }
        for r in row.iter_mut() {
            *r += FEATURE_NOISE_SD * rng.sample::<f64, _>(StandardNormal);
        }
        rows.push(row);
        let signal: f64 = z.iter().sum::<f64>() * beta;
        raw_targets.push(signal + spec.noise_sd * rng.sample::<f64, _>(StandardNormal));
    }
    // Standardize the raw targets, then move them to the published scale and
    // clip to the score range.
    let n = spec.n_patients as f64;
    let mean = raw_targets.iter().sum::<f64>() / n;
    let sd = (raw_targets.iter().map(|t| (t - mean) * (t - mean)).sum::<f64>() / n).sqrt();
    let targets: Vec<f64> = raw_targets
        .iter()
        .map(|t| {
            let standardized = if sd > 0.0 { (t - mean) / sd } else { 0.0 };
            (spec.target_mean + spec.target_sd * standardized).clamp(TARGET_MIN, TARGET_MAX)
        })
        .collect();
    DesignMatrix::new(rows, targets)
}

/// Sequential patient ids (`p001`, ...) for a generated cohort.
pub fn sequential_ids(n: usize) -> Vec<String> {
    let width = n.to_string().len().max(3);
    (1..=n).map(|i| format!("p{i:0width$}")).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Table,
    Structured,
}

/// Writes a report either as the aligned-column table or as lossless JSON.
pub fn write_report(report: &CvReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let text = match format {
        ReportFormat::Table => report.render_table(),
        ReportFormat::Structured => report.to_json(),
    };
    fs::write(path, text)?;
    Ok(())
}
