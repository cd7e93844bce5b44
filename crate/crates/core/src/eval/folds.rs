//! 5x5 nested cross-validation fold plans.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

pub const OUTER_FOLDS: usize = 5;
pub const INNER_FOLDS: usize = 5;

/// Disjoint outer test folds covering all rows, plus per-outer-fold inner
/// validation folds drawn only from that fold's training rows.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    outer: Vec<Vec<usize>>,
    inner: Vec<Vec<Vec<usize>>>,
    seed: u64,
    n: usize,
}

fn split_balanced(mut indices: Vec<usize>, parts: usize, rng: &mut impl rand::Rng) -> Vec<Vec<usize>> {
    indices.shuffle(rng);
    let n = indices.len();
    let base = n / parts;
    let extra = n % parts;
    let mut out = Vec::with_capacity(parts);
    let mut start = 0;
    for p in 0..parts {
        let len = base + usize::from(p < extra);
        out.push(indices[start..start + len].to_vec());
        start += len;
    }
    out
}

/// Shuffled, size-balanced (sizes differ by at most one) disjoint folds,
/// deterministic in `seed`.
pub fn make_fold_plan(n: usize, seed: u64) -> Result<FoldPlan> {
    if n < 2 * OUTER_FOLDS {
        return Err(Error::TooFewRows {
            context: "fold plan",
            required: 2 * OUTER_FOLDS,
            actual: n,
        });
    }
    let mut rng = seeding::rng_for(&[seed, seeding::label("outer-folds")]);
    let outer = split_balanced((0..n).collect(), OUTER_FOLDS, &mut rng);
    let mut inner = Vec::with_capacity(OUTER_FOLDS);
    for (k, test) in outer.iter().enumerate() {
        let in_test: Vec<bool> = {
            let mut flags = vec![false; n];
            for &i in test {
                flags[i] = true;
            }
            flags
        };
        let train: Vec<usize> = (0..n).filter(|&i| !in_test[i]).collect();
        let mut inner_rng = seeding::rng_for(&[seed, seeding::label("inner-folds"), k as u64]);
        inner.push(split_balanced(train, INNER_FOLDS, &mut inner_rng));
    }
    Ok(FoldPlan {
        outer,
        inner,
        seed,
        n,
    })
}

impl FoldPlan {
    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Outer test index sets.
    #[inline]
    pub fn outer_folds(&self) -> &[Vec<usize>] {
        &self.outer
    }

    pub fn outer_test(&self, fold: usize) -> &[usize] {
        &self.outer[fold]
    }

    /// Training rows of outer fold `fold` in ascending order.
    pub fn outer_train(&self, fold: usize) -> Vec<usize> {
        let mut in_test = vec![false; self.n];
        for &i in &self.outer[fold] {
            in_test[i] = true;
        }
        (0..self.n).filter(|&i| !in_test[i]).collect()
    }

    /// Inner validation index sets for outer fold `fold`.
    pub fn inner_folds(&self, fold: usize) -> &[Vec<usize>] {
        &self.inner[fold]
    }

    /// Inner train/validation split `j` within outer fold `fold`.
    pub fn inner_split(&self, fold: usize, j: usize) -> (Vec<usize>, &[usize]) {
        let val = &self.inner[fold][j];
        let mut in_val = vec![false; self.n];
        for &i in val {
            in_val[i] = true;
        }
        let mut in_test = vec![false; self.n];
        for &i in &self.outer[fold] {
            in_test[i] = true;
        }
        let train: Vec<usize> = (0..self.n)
            .filter(|&i| !in_val[i] && !in_test[i])
            .collect();
        (train, val)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn n_ten_gives_equal_outer_folds() {
        let plan = make_fold_plan(10, 0).unwrap();
        for f in plan.outer_folds() {
            assert_eq!(f.len(), 2);
        }
    }

    #[test]
    fn n_188_gives_37_or_38() {
        let plan = make_fold_plan(188, 1).unwrap();
        let sizes: Vec<usize> = plan.outer_folds().iter().map(Vec::len).collect();
        assert!(sizes.iter().all(|&s| s == 37 || s == 38), "{sizes:?}");
        assert_eq!(sizes.iter().sum::<usize>(), 188);
    }

    #[test]
    fn outer_folds_partition_everything() {
        let plan = make_fold_plan(53, 7).unwrap();
        let mut seen = BTreeSet::new();
        for f in plan.outer_folds() {
            for &i in f {
                assert!(seen.insert(i), "index {i} appears twice");
            }
        }
        assert_eq!(seen, (0..53).collect());
    }

    #[test]
    fn inner_folds_partition_outer_train_and_avoid_test() {
        let plan = make_fold_plan(47, 3).unwrap();
        for k in 0..OUTER_FOLDS {
            let test: BTreeSet<usize> = plan.outer_test(k).iter().cloned().collect();
            let train: BTreeSet<usize> = plan.outer_train(k).into_iter().collect();
            let mut seen = BTreeSet::new();
            for j in 0..INNER_FOLDS {
                for &i in &plan.inner_folds(k)[j] {
                    assert!(!test.contains(&i), "inner fold leaks outer-test index {i}");
                    assert!(seen.insert(i));
                }
            }
            assert_eq!(seen, train);
            // Split accessor is consistent.
            for j in 0..INNER_FOLDS {
                let (inner_train, inner_val) = plan.inner_split(k, j);
                let val_set: BTreeSet<usize> = inner_val.iter().cloned().collect();
                for &i in &inner_train {
                    assert!(train.contains(&i));
                    assert!(!val_set.contains(&i));
                }
                assert_eq!(inner_train.len() + inner_val.len(), train.len());
            }
        }
    }

    #[test]
    fn deterministic_in_seed() {
        assert_eq!(make_fold_plan(30, 9).unwrap(), make_fold_plan(30, 9).unwrap());
        assert_ne!(make_fold_plan(30, 9).unwrap(), make_fold_plan(30, 10).unwrap());
    }

    #[test]
    fn too_small_n_rejected() {
        assert!(make_fold_plan(9, 0).is_err());
        assert!(make_fold_plan(10, 0).is_ok());
    }
}
