//! Cross-validation report: per-fold and aggregate metrics per family,
//! pairwise significance tests, and the aligned-column table rendering.
//!
//! The structured form is canonical JSON (stable field order, shortest
//! round-tripping floats), so writing, parsing, and re-writing a report is
//! byte-identical.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::grid::HyperCell;

pub const AGGREGATE_LABEL: &str = "1-5";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    /// 1-based outer fold number.
    pub fold: usize,
    pub mse: f64,
    /// Absent for point-prediction families ("n.a." in the table).
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub smse: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub selected: Option<HyperCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub family: String,
    pub folds: Vec<FoldResult>,
    pub aggregate_mse: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub aggregate_smse: Option<f64>,
}

impl FamilyReport {
    /// Builds the aggregate row as the arithmetic mean of the fold values.
    /// The aggregate SMSE exists only when every fold reported one.
    pub fn from_folds(family: impl Into<String>, folds: Vec<FoldResult>) -> Result<Self> {
        if folds.is_empty() {
            return Err(Error::TooFewRows {
                context: "family report",
                required: 1,
                actual: 0,
            });
        }
        let n = folds.len() as f64;
        let aggregate_mse = folds.iter().map(|f| f.mse).sum::<f64>() / n;
        let aggregate_smse = if folds.iter().all(|f| f.smse.is_some()) {
            Some(folds.iter().map(|f| f.smse.unwrap()).sum::<f64>() / n)
        } else {
            None
        };
        Ok(Self {
            family: family.into(),
            folds,
            aggregate_mse,
            aggregate_smse,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub family_a: String,
    pub family_b: String,
    pub statistic: f64,
    pub p_value: f64,
    /// Paired squared errors entering the test after zero differences drop.
    pub n_effective: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub artifact_version: String,
    pub config_hash: String,
    pub seed: u64,
    pub notes: Vec<String>,
    pub families: Vec<FamilyReport>,
    pub significance: Vec<PairwiseTest>,
}

fn fmt_metric(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.2}"),
        None => "n.a.".to_string(),
    }
}

impl CvReport {
    /// Canonical structured form.
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Aligned-column table: fold rows 1..5 plus the aggregate row, two
    /// decimal places, "n.a." where SMSE is undefined.
    pub fn render_table(&self) -> String {
        let mut labels = vec!["Test set".to_string()];
        for fr in self.families.iter().flat_map(|f| &f.folds) {
            let label = fr.fold.to_string();
            if !labels.contains(&label) {
                labels.push(label);
            }
        }
        labels.push(AGGREGATE_LABEL.to_string());

        // One row of cells per label; two columns (MSE, SMSE) per family.
        let mut rows: Vec<Vec<String>> = Vec::new();
        for label in &labels[1..] {
            let mut row = vec![label.clone()];
            for fam in &self.families {
                if label == AGGREGATE_LABEL {
                    row.push(fmt_metric(Some(fam.aggregate_mse)));
                    row.push(fmt_metric(fam.aggregate_smse));
                } else {
                    let fold: usize = label.parse().unwrap();
                    match fam.folds.iter().find(|f| f.fold == fold) {
                        Some(f) => {
                            row.push(fmt_metric(Some(f.mse)));
                            row.push(fmt_metric(f.smse));
                        }
                        None => {
                            row.push("-".into());
                            row.push("-".into());
                        }
                    }
                }
            }
            rows.push(row);
        }

        let mut header = vec!["Test set".to_string()];
        for _ in &self.families {
            header.push("MSE".into());
            header.push("SMSE".into());
        }
        let mut widths: Vec<usize> = header.iter().map(String::len).collect();
        for row in &rows {
            for (w, cell) in widths.iter_mut().zip(row) {
                *w = (*w).max(cell.len());
            }
        }
        // Family names span their two metric columns.
        let mut top = format!("{:w$}", "", w = widths[0]);
        for (i, fam) in self.families.iter().enumerate() {
            let span = widths[1 + 2 * i] + widths[2 + 2 * i] + 2;
            top.push_str("  ");
            top.push_str(&format!("{:span$}", fam.family, span = span));
        }
        let fmt_row = |cells: &[String]| {
            let mut line = String::new();
            for (i, cell) in cells.iter().enumerate() {
                if i > 0 {
                    line.push_str("  ");
                }
                line.push_str(&format!("{:w$}", cell, w = widths[i]));
            }
            line.trim_end().to_string()
        };
        let mut out = String::new();
        out.push_str(top.trim_end());
        out.push('\n');
        out.push_str(&fmt_row(&header));
        out.push('\n');
        let sep_len = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
        out.push_str(&"-".repeat(sep_len));
        out.push('\n');
        for (i, row) in rows.iter().enumerate() {
            if i + 1 == rows.len() {
                out.push_str(&"-".repeat(sep_len));
                out.push('\n');
            }
            out.push_str(&fmt_row(row));
            out.push('\n');
        }
        if !self.significance.is_empty() {
            out.push('\n');
            out.push_str("Paired squared-error tests (Wilcoxon signed-rank, two-sided):\n");
            for t in &self.significance {
                out.push_str(&format!(
                    "  {} vs {}: W = {:.1}, p = {:.4} (n = {})\n",
                    t.family_a, t.family_b, t.statistic, t.p_value, t.n_effective
                ));
            }
        }
        out.push('\n');
        out.push_str(&format!(
            "seed = {}, config = {}, version = {}\n",
            self.seed, self.config_hash, self.artifact_version
        ));
        for note in &self.notes {
            out.push_str(&format!("note: {note}\n"));
        }
        out
    }
}
