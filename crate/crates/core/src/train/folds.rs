//! Subject-level k-fold plans.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub k: usize,
    /// subject id -> fold index
    pub assignment: BTreeMap<String, usize>,
}

/// Shuffles the distinct subjects and deals them round-robin into `k` folds.
pub fn subject_folds<S: AsRef<str>>(subjects: &[S], k: usize, rng: &mut impl Rng) -> Result<FoldPlan> {
    let unique: BTreeSet<&str> = subjects.iter().map(|s| s.as_ref()).collect();
    if k == 0 || k > unique.len() {
        return Err(Error::Config(format!(
            "cannot split {} subjects into {k} folds",
            unique.len()
        )));
    }
    let mut order: Vec<&str> = unique.into_iter().collect();
    order.shuffle(rng);
    let assignment = order
        .into_iter()
        .enumerate()
        .map(|(i, s)| (s.to_string(), i % k))
        .collect();
    Ok(FoldPlan { k, assignment })
}

impl FoldPlan {
    pub fn fold_of(&self, subject: &str) -> Option<usize> {
        self.assignment.get(subject).copied()
    }

    /// Held-out subjects of fold `i`.
    pub fn validation_subjects(&self, i: usize) -> BTreeSet<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f == i)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    pub fn training_subjects(&self, i: usize) -> BTreeSet<&str> {
        self.assignment
            .iter()
            .filter(|(_, &f)| f != i)
            .map(|(s, _)| s.as_str())
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in self.assignment.values() {
            sizes[f] += 1;
        }
        sizes
    }

    /// Every fold index in range and non-empty.
    pub fn validate(&self) -> Result<()> {
        if let Some((s, f)) = self.assignment.iter().find(|(_, &f)| f >= self.k) {
            return Err(Error::Config(format!("subject `{s}` assigned to fold {f} of {}", self.k)));
        }
        if let Some(i) = self.fold_sizes().iter().position(|&n| n == 0) {
            return Err(Error::Config(format!("fold {i} is empty")));
        }
        Ok(())
    }
}
