//! The evaluation report: TOML text with a fixed key order and rounded
//! metrics, so equal runs produce equal bytes.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::train::{Evaluation, EpochLog};

pub const SCHEMA_VERSION: u32 = 1;

/// Name of the stream that fuses every trained modality.
pub const FUSED: &str = "fused";

const DECIMALS: f64 = 1e4;

fn round(x: f64) -> f64 {
    (x * DECIMALS).round() / DECIMALS
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub task: String,
    pub seed: u64,
    pub clips: usize,
    pub subjects: usize,
    pub k: usize,
    pub streams: Vec<StreamReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub name: String,
    pub modalities: Vec<String>,
    /// Headline: mean over folds of per-fold macro-F1.
    pub mean_f1: f64,
    pub std_f1: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Over all held-out predictions pooled.
    pub pooled_f1: f64,
    pub pooled_accuracy: f64,
    pub folds: Vec<FoldReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldReport {
    pub fold: usize,
    pub clips: usize,
    pub macro_f1: f64,
    pub accuracy: f64,
    /// Training-set macro-F1 at the last epoch, when the log is at hand.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train_f1: Option<f64>,
    pub confusion: Vec<Vec<usize>>,
}

impl StreamReport {
    /// `logs[i]` belongs to `eval.folds[i]`.
    pub fn new(name: &str, modalities: Vec<String>, eval: &Evaluation, logs: &[Option<&[EpochLog]>]) -> Self {
        let folds = eval
            .folds
            .iter()
            .enumerate()
            .map(|(i, f)| FoldReport {
                fold: f.fold,
                clips: f.predictions.len(),
                macro_f1: round(f.macro_f1),
                accuracy: round(f.accuracy),
                train_f1: logs
                    .get(i)
                    .copied()
                    .flatten()
                    .and_then(|l| l.iter().rev().find_map(|e| e.checkpoint.as_ref()))
                    .map(|c| round(c.train_f1)),
                confusion: f.confusion.counts.clone(),
            })
            .collect();
        Self {
            name: name.to_string(),
            modalities,
            mean_f1: round(eval.mean_f1),
            std_f1: round(eval.std_f1),
            mean_accuracy: round(eval.mean_accuracy),
            std_accuracy: round(eval.std_accuracy),
            pooled_f1: round(eval.pooled_f1),
            pooled_accuracy: round(eval.pooled_accuracy),
            folds,
        }
    }
}

impl Report {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn parse(text: &str) -> Result<Self> {
        let report: Report = toml::from_str(text).map_err(|e| Error::Input(format!("bad report: {e}")))?;
        if report.schema_version != SCHEMA_VERSION {
            return Err(Error::Input(format!(
                "report schema {} is not {SCHEMA_VERSION}",
                report.schema_version
            )));
        }
        Ok(report)
    }

    pub fn stream(&self, name: &str) -> Option<&StreamReport> {
        self.streams.iter().find(|s| s.name == name)
    }
}
