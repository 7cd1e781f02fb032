//! Confusion matrices, macro-F1 and accuracy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<usize>>) -> Result<Self> {
        let m = counts.len();
        if m == 0 || counts.iter().any(|r| r.len() != m) {
            return Err(Error::Input("confusion matrix must be square and non-empty".into()));
        }
        Ok(Self { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) -> Result<()> {
        let m = self.classes();
        if truth >= m || predicted >= m {
            return Err(Error::Input(format!("class pair ({truth}, {predicted}) outside 0..{m}")));
        }
        self.counts[truth][predicted] += 1;
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, o) in self.counts.iter_mut().zip(&other.counts) {
            for (a, b) in row.iter_mut().zip(o) {
                *a += b;
            }
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let correct: usize = (0..self.classes()).map(|i| self.counts[i][i]).sum();
        correct as f64 / total as f64
    }

    /// Per-class F1, `None` for a class that is neither present nor predicted.
    pub fn class_f1(&self) -> Vec<Option<f64>> {
        (0..self.classes())
            .map(|c| {
                let tp = self.counts[c][c];
                let support: usize = self.counts[c].iter().sum();
                let predicted: usize = self.counts.iter().map(|r| r[c]).sum();
                let denom = support + predicted;
                (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
            })
            .collect()
    }

    /// Unweighted mean of the defined per-class F1 values.
    pub fn macro_f1(&self) -> f64 {
        let defined: Vec<f64> = self.class_f1().into_iter().flatten().collect();
        if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        }
    }
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect() {
        let mut cm = ConfusionMatrix::new(3);
        for c in [0, 1, 2, 2, 1] {
            cm.record(c, c).unwrap();
        }
        assert_eq!(cm.accuracy(), 1.0);
        assert_eq!(cm.macro_f1(), 1.0);
    }

    #[test]
    fn hand_evaluated_example() {
        let cm = ConfusionMatrix::from_counts(vec![vec![5, 0, 0], vec![0, 0, 5], vec![0, 0, 5]]).unwrap();
        assert!((cm.macro_f1() - (1.0 + 0.0 + 2.0 / 3.0) / 3.0).abs() < 1e-12);
        assert!((cm.accuracy() - 10.0 / 15.0).abs() < 1e-12);
    }

    #[test]
    fn absent_class_is_skipped() {
        let cm = ConfusionMatrix::from_counts(vec![vec![2, 0, 0], vec![0, 3, 0], vec![0, 0, 0]]).unwrap();
        assert_eq!(cm.class_f1()[2], None);
        assert_eq!(cm.macro_f1(), 1.0);
    }

    #[test]
    fn out_of_range() {
        assert!(ConfusionMatrix::new(3).record(3, 0).is_err());
        assert!(ConfusionMatrix::from_counts(vec![vec![1, 2]]).is_err());
    }
}
