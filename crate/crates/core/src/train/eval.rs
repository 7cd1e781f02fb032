//! Video-level prediction over held-out folds.

use serde::{Deserialize, Serialize};

use super::folds::FoldPlan;
use super::metrics::{mean_std, ConfusionMatrix};
use super::trainer::Video;
use crate::error::{Error, Result};
use crate::model::{predict_video, Model};
use crate::sampling::{Clip, SamplerConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub clip_id: String,
    pub truth: usize,
    pub predicted: usize,
    pub probs: Vec<f64>,
}

/// Fused predictions of `models` for each video.
pub fn evaluate_videos(
    models: &[&Model],
    videos: &[&Video],
    sampler: &SamplerConfig,
) -> Result<(ConfusionMatrix, Vec<Prediction>)> {
    let classes = models
        .first()
        .ok_or_else(|| Error::Config("no models to evaluate".into()))?
        .config
        .num_classes;
    let mut cm = ConfusionMatrix::new(classes);
    let mut predictions = Vec::with_capacity(videos.len());
    for v in videos {
        let clips: Vec<&Clip> = v.streams.iter().collect();
        let (predicted, probs) = predict_video(models, &clips, sampler)?;
        cm.record(v.label, predicted)?;
        predictions.push(Prediction {
            clip_id: v.clip_id.clone(),
            truth: v.label,
            predicted,
            probs,
        });
    }
    Ok((cm, predictions))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    pub confusion: ConfusionMatrix,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub predictions: Vec<Prediction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub folds: Vec<FoldResult>,
    pub mean_f1: f64,
    pub std_f1: f64,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    /// Metrics over the predictions of every fold pooled together.
    pub pooled: ConfusionMatrix,
    pub pooled_f1: f64,
    pub pooled_accuracy: f64,
}

/// Evaluates `models[fold]` (one model per fused modality) on the held-out
/// subjects of each listed fold.
pub fn evaluate(
    plan: &FoldPlan,
    videos: &[Video],
    models: &[(usize, Vec<Model>)],
    sampler: &SamplerConfig,
) -> Result<Evaluation> {
    plan.validate()?;
    if models.is_empty() {
        return Err(Error::Config("no fold models to evaluate".into()));
    }
    let mut folds = Vec::with_capacity(models.len());
    for (fold, fold_models) in models {
        if *fold >= plan.k || fold_models.is_empty() {
            return Err(Error::Config(format!("missing model for fold {fold}")));
        }
        let held = plan.validation_subjects(*fold);
        let chosen: Vec<&Video> = videos
            .iter()
            .filter(|v| held.contains(v.subject_id.as_str()))
            .collect();
        let refs: Vec<&Model> = fold_models.iter().collect();
        let (confusion, predictions) = evaluate_videos(&refs, &chosen, sampler)?;
        folds.push(FoldResult {
            fold: *fold,
            macro_f1: confusion.macro_f1(),
            accuracy: confusion.accuracy(),
            confusion,
            predictions,
        });
    }
    let (mean_f1, std_f1) = mean_std(&folds.iter().map(|f| f.macro_f1).collect::<Vec<_>>());
    let (mean_accuracy, std_accuracy) = mean_std(&folds.iter().map(|f| f.accuracy).collect::<Vec<_>>());
    let mut pooled = ConfusionMatrix::new(folds[0].confusion.classes());
    for f in &folds {
        pooled.merge(&f.confusion);
    }
    Ok(Evaluation {
        mean_f1,
        std_f1,
        mean_accuracy,
        std_accuracy,
        pooled_f1: pooled.macro_f1(),
        pooled_accuracy: pooled.accuracy(),
        pooled,
        folds,
    })
}
