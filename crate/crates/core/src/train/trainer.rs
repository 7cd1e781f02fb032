use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::eval::evaluate_videos;
use super::focal::FocalConfig;
use super::metrics::ConfusionMatrix;
use crate::error::{Error, Result};
use crate::model::{argmax, clip_loss_on_tape, Model};
use crate::rng::stream;
use crate::sampling::{augment, segment_sample, AugmentConfig, Clip, Modality, SamplerConfig};
use crate::tensor::{AdamConfig, Tape};

/// One labelled video with a clip per available modality.
#[derive(Clone, Debug)]
pub struct Video {
    pub clip_id: String,
    pub subject_id: String,
    pub label: usize,
    pub streams: Vec<Clip>,
}

impl Video {
    pub fn stream(&self, modality: Modality) -> Result<&Clip> {
        self.streams
            .iter()
            .find(|c| c.modality == modality)
            .ok_or_else(|| Error::Config(format!("video `{}` has no {modality} stream", self.clip_id)))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub focal: FocalConfig,
    pub augment: AugmentConfig,
    /// Clean evaluation cadence in epochs; the last epoch is always evaluated.
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 120,
            batch_size: 2,
            optimizer: AdamConfig::default(),
            focal: FocalConfig::default(),
            augment: AugmentConfig::default(),
            eval_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return Err(Error::Config("epochs, batch size and eval cadence must be >= 1".into()));
        }
        self.optimizer.validate()?;
        self.focal.validate()
    }
}

/// Dense-snippet evaluation taken during training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub train_f1: f64,
    pub train_accuracy: f64,
    pub heldout_f1: Option<f64>,
    pub heldout_accuracy: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// From the augmented, dropout-perturbed training forward passes.
    pub running_f1: f64,
    pub checkpoint: Option<Checkpoint>,
}

/// Trains `model` in place. `heldout` videos, if any, are only evaluated.
pub fn train(
    model: &mut Model,
    videos: &[&Video],
    heldout: &[&Video],
    sampler: &SamplerConfig,
    config: &TrainConfig,
    seed: u64,
) -> Result<Vec<EpochLog>> {
    config.validate()?;
    sampler.validate()?;
    model.config.validate()?;
    if videos.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    let modality = model.modality;
    let clips: Vec<&Clip> = videos.iter().map(|v| v.stream(modality)).collect::<Result<_>>()?;
    let classes = model.config.num_classes;
    if let Some(v) = videos.iter().find(|v| v.label >= classes) {
        return Err(Error::Input(format!("video `{}` has label {} of {classes}", v.clip_id, v.label)));
    }

    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let mut order: Vec<usize> = (0..videos.len()).collect();
        order.shuffle(&mut stream(seed, &format!("order/{epoch}")));
        let mut running = ConfusionMatrix::new(classes);
        let mut loss_sum = 0.0;
        for (step, batch) in order.chunks(config.batch_size).enumerate() {
            for &i in batch {
                let mut rng = stream(seed, &format!("clip/{epoch}/{}", videos[i].clip_id));
                let mut frames = Vec::with_capacity(sampler.k_segments);
                for s in segment_sample(clips[i], sampler, &mut rng)? {
                    frames.push(augment(&s, &mut rng, &config.augment)?.frames);
                }
                let mut tape = Tape::new();
                let (probs, loss) = clip_loss_on_tape(
                    &mut tape,
                    &model.params,
                    &model.config,
                    modality,
                    frames,
                    videos[i].label,
                    &config.focal,
                    Some(&mut rng),
                )?;
                let value = tape.value(loss).data()[0] as f64;
                if !value.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        step,
                        detail: format!("loss {value} on `{}`", videos[i].clip_id),
                    });
                }
                loss_sum += value;
                let probs: Vec<f64> = tape.value(probs).data().iter().map(|&p| p as f64).collect();
                running.record(videos[i].label, argmax(&probs))?;
                tape.backward(loss, &mut model.params)?;
            }
            model.params.scale_grads(1.0 / batch.len() as f32);
            model.params.adam_step(&config.optimizer)?;
        }

        let checkpoint = if epoch % config.eval_every == 0 || epoch == config.epochs {
            let (train_cm, _) = evaluate_videos(&[&*model], videos, sampler)?;
            let held = if heldout.is_empty() {
                None
            } else {
                Some(evaluate_videos(&[&*model], heldout, sampler)?.0)
            };
            Some(Checkpoint {
                train_f1: train_cm.macro_f1(),
                train_accuracy: train_cm.accuracy(),
                heldout_f1: held.as_ref().map(|c| c.macro_f1()),
                heldout_accuracy: held.as_ref().map(|c| c.accuracy()),
            })
        } else {
            None
        };
        logs.push(EpochLog {
            epoch,
            mean_loss: loss_sum / videos.len() as f64,
            running_f1: running.macro_f1(),
            checkpoint,
        });
    }
    Ok(logs)
}
