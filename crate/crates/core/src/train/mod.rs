//! Focal loss, score grouping, the training loop, subject folds, metrics.

pub mod eval;
pub mod focal;
pub mod folds;
pub mod metrics;
mod trainer;

use crate::error::{Error, Result};

pub use eval::{evaluate, evaluate_videos, Evaluation, FoldResult, Prediction};
pub use focal::{cross_entropy, focal_loss, FocalConfig};
pub use folds::{subject_folds, FoldPlan};
pub use metrics::ConfusionMatrix;
pub use trainer::{train, Checkpoint, EpochLog, TrainConfig, Video};

/// Severity class of a raw 0..4 score: 0 -> 0, 1-2 -> 1, 3-4 -> 2.
pub fn group_scores(raw: u8) -> Result<usize> {
    match raw {
        0 => Ok(0),
        1 | 2 => Ok(1),
        3 | 4 => Ok(2),
        _ => Err(Error::Input(format!("score {raw} outside 0..=4"))),
    }
}
