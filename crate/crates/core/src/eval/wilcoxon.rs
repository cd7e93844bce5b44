//! Two-sided Wilcoxon signed-rank test on paired squared errors.
//!
//! Squared prediction errors are heavily non-Gaussian, so a rank test
//! compares model families. Zero differences are dropped. The null
//! distribution is exact (dynamic programming over the signed-rank sum) for
//! up to [`EXACT_LIMIT`] nonzero pairs and a normal approximation with tie
//! correction above that.

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest number of nonzero differences handled by the exact distribution.
pub const EXACT_LIMIT: usize = 25;

/// Statistic is `min(W+, W-)`; the p-value is two-sided.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignedRankResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs remaining after zero differences are dropped.
    pub n_effective: usize,
}

/// Ranks of `|d|` with average ranks for ties, doubled so they are integers.
/// Returns the doubled ranks plus the tie-group sizes.
fn doubled_ranks(abs_diffs: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let m = abs_diffs.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| abs_diffs[a].partial_cmp(&abs_diffs[b]).unwrap());
    let mut ranks2 = vec![0u64; m];
    let mut tie_groups = Vec::new();
    let mut i = 0;
    while i < m {
        let mut j = i;
        while j + 1 < m && abs_diffs[order[j + 1]] == abs_diffs[order[i]] {
            j += 1;
        }
        // Positions i..=j share the average rank (i+1 + ... + j+1)/(j-i+1);
        // doubled it is (i + j + 2).
        let doubled = (i + j + 2) as u64;
        for &idx in &order[i..=j] {
            ranks2[idx] = doubled;
        }
        tie_groups.push(j - i + 1);
        i = j + 1;
    }
    (ranks2, tie_groups)
}

/// Exact two-sided p-value: the null distribution of the doubled positive
/// rank sum is built by convolution, and the smaller tail is doubled.
fn exact_p(ranks2: &[u64], w2_plus: u64) -> f64 {
    let total_sum: u64 = ranks2.iter().sum();
    let mut counts = vec![0u64; total_sum as usize + 1];
    counts[0] = 1;
    for &r in ranks2 {
        let r = r as usize;
        for w in (r..counts.len()).rev() {
            counts[w] += counts[w - r];
        }
    }
    let total: u64 = 1u64 << ranks2.len();
    debug_assert_eq!(counts.iter().sum::<u64>(), total);
    let w = w2_plus as usize;
    let le: u64 = counts[..=w].iter().sum();
    let ge: u64 = counts[w..].iter().sum();
    let p = 2.0 * le.min(ge) as f64 / total as f64;
    p.min(1.0)
}

/// Normal approximation with tie correction (no continuity correction).
fn normal_p(m: usize, tie_groups: &[usize], w_plus: f64) -> f64 {
    let mf = m as f64;
    let mean = mf * (mf + 1.0) / 4.0;
    let tie_term: f64 = tie_groups
        .iter()
        .map(|&t| {
            let t = t as f64;
            (t * t * t - t) / 48.0
        })
        .sum();
    let var = mf * (mf + 1.0) * (2.0 * mf + 1.0) / 24.0 - tie_term;
    let z = (w_plus - mean) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * (1.0 - normal.cdf(z.abs()))).min(1.0)
}

/// Compares paired squared errors: `d_i = errs_a[i] - errs_b[i]`.
///
/// Identical inputs (all differences zero) give `p = 1` by convention.
pub fn paired_sq_error_test(errs_a: &[f64], errs_b: &[f64]) -> Result<SignedRankResult> {
    if errs_a.len() != errs_b.len() {
        return Err(Error::LengthMismatch {
            context: "paired_sq_error_test",
            left: errs_a.len(),
            right: errs_b.len(),
        });
    }
    if errs_a.len() < 6 {
        return Err(Error::TooFewRows {
            context: "paired_sq_error_test",
            required: 6,
            actual: errs_a.len(),
        });
    }
    let diffs: Vec<f64> = errs_a
        .iter()
        .zip(errs_b)
        .map(|(a, b)| a - b)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::NonFinite("squared-error difference"));
    }
    let m = diffs.len();
    if m == 0 {
        return Ok(SignedRankResult {
            statistic: 0.0,
            p_value: 1.0,
            n_effective: 0,
        });
    }
    let abs_diffs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks2, tie_groups) = doubled_ranks(&abs_diffs);
    let w2_plus: u64 = diffs
        .iter()
        .zip(&ranks2)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, &r)| r)
        .sum();
    let w_plus = w2_plus as f64 / 2.0;
    let w_minus = m as f64 * (m as f64 + 1.0) / 2.0 - w_plus;
    let p_value = if m <= EXACT_LIMIT {
        exact_p(&ranks2, w2_plus)
    } else {
        normal_p(m, &tie_groups, w_plus)
    };
    Ok(SignedRankResult {
        statistic: w_plus.min(w_minus),
        p_value,
        n_effective: m,
    })
}
