//! Shared-weight 3D-convolutional snippet encoder with a per-snippet
//! attention unit, attention-weighted consensus and late fusion.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{dense_snippets, Clip, Modality, SamplerConfig};
use crate::tensor::{read_checkpoint, write_checkpoint, NodeId, ParamSet, Scalar, Tape, Tensor};
use crate::train::focal::FocalConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub channels: usize,
    /// (kT, kH, kW); padding is `k / 2` on each axis.
    pub kernel: [usize; 3],
    /// (time, height, width)
    pub stride: [usize; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub stages: Vec<StageConfig>,
    pub num_classes: usize,
    /// Attention hidden width; half the feature width when absent.
    pub attention_hidden: Option<usize>,
    /// When false every snippet weight is fixed at 1.
    pub attention: bool,
    /// Probability of zeroing a feature during training.
    pub dropout: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        let stage = |channels, stride| StageConfig {
            channels,
            kernel: [3, 3, 3],
            stride,
        };
        Self {
            stages: vec![
                stage(8, [1, 2, 2]),
                stage(16, [2, 1, 1]),
                stage(32, [1, 2, 2]),
                stage(64, [2, 1, 1]),
            ],
            num_classes: 3,
            attention_hidden: None,
            attention: true,
            dropout: 0.7,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("encoder needs at least one stage".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config(format!("need >= 2 classes, got {}", self.num_classes)));
        }
        for (i, s) in self.stages.iter().enumerate() {
            if s.channels == 0 || s.kernel.contains(&0) || s.stride.contains(&0) {
                return Err(Error::Config(format!("stage {i} has a zero extent")));
            }
        }
        if self.attention_hidden == Some(0) {
            return Err(Error::Config("attention hidden width must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.stages.last().map_or(0, |s| s.channels)
    }

    pub fn hidden_dim(&self) -> usize {
        self.attention_hidden.unwrap_or((self.feature_dim() / 2).max(1))
    }
}

/// Replicates a 2D kernel [C_out, C_in, kH, kW] along time and divides by
/// `depth`, giving [C_out, C_in, depth, kH, kW].
pub fn inflate_kernel<S: Scalar>(kernel2d: &Tensor<S>, depth: usize) -> Result<Tensor<S>> {
    if depth == 0 {
        return Err(Error::Config("inflation depth must be >= 1".into()));
    }
    let shape = kernel2d.shape();
    if shape.len() != 4 {
        return Err(Error::Dimension {
            axis: "kernel rank",
            detail: format!("expected [C_out, C_in, kH, kW], got {shape:?}"),
        });
    }
    let plane = shape[2] * shape[3];
    let inv = S::from_f64_lossy(1.0 / depth as f64);
    let mut data = Vec::with_capacity(kernel2d.numel() * depth);
    for filter in kernel2d.data().chunks_exact(plane) {
        for _ in 0..depth {
            data.extend(filter.iter().map(|&v| if depth == 1 { v } else { v * inv }));
        }
    }
    Tensor::new(vec![shape[0], shape[1], depth, shape[2], shape[3]], data)
}

/// Parameter names of conv stage `i`.
fn conv_names(i: usize) -> (String, String) {
    (format!("conv{i}.weight"), format!("conv{i}.bias"))
}

/// Fan-in scaled uniform weights, zero biases.
pub fn init_params(config: &EncoderConfig, modality: Modality, rng: &mut impl Rng) -> Result<ParamSet<f32>> {
    config.validate()?;
    let mut params = ParamSet::new();
    let mut uniform = |shape: &[usize], fan_in: usize, gain: f64| {
        let bound = (gain / fan_in as f64).sqrt();
        Tensor::from_fn(shape, |_| rng.gen_range(-bound..bound) as f32)
    };
    let mut c_in = modality.channels();
    for (i, s) in config.stages.iter().enumerate() {
        let (w, b) = conv_names(i);
        let fan_in = c_in * s.kernel.iter().product::<usize>();
        let shape = [s.channels, c_in, s.kernel[0], s.kernel[1], s.kernel[2]];
        params.insert(w, uniform(&shape, fan_in, 6.0))?;
        params.insert(b, Tensor::zeros(&[s.channels]))?;
        c_in = s.channels;
    }
    let (f, h, m) = (config.feature_dim(), config.hidden_dim(), config.num_classes);
    params.insert("cls.weight", uniform(&[m, f], f, 3.0))?;
    params.insert("cls.bias", Tensor::zeros(&[m]))?;
    params.insert("att1.weight", uniform(&[h, f], f, 6.0))?;
    params.insert("att1.bias", Tensor::zeros(&[h]))?;
    params.insert("att2.weight", uniform(&[1, h], h, 3.0))?;
    params.insert("att2.bias", Tensor::zeros(&[1]))?;
    Ok(params)
}

/// Tape nodes produced for one snippet.
#[derive(Clone, Copy, Debug)]
pub struct SnippetNodes {
    pub features: NodeId,
    pub scores: NodeId,
    pub attention: NodeId,
}

/// Records the encoder on `tape`. Dropout runs only when `dropout_rng` is
/// given.
pub fn encode_on_tape<S: Scalar, R: Rng>(
    tape: &mut Tape<S>,
    params: &ParamSet<S>,
    config: &EncoderConfig,
    input: NodeId,
    dropout_rng: Option<&mut R>,
) -> Result<SnippetNodes> {
    let mut x = input;
    for (i, s) in config.stages.iter().enumerate() {
        let (w, b) = conv_names(i);
        let w = tape.param(params, &w)?;
        let b = tape.param(params, &b)?;
        let padding = [s.kernel[0] / 2, s.kernel[1] / 2, s.kernel[2] / 2];
        x = tape.conv3d(x, w, s.stride, padding)?;
        x = tape.add_channel_bias(x, b)?;
        x = tape.relu(x);
    }
    let features = tape.global_avg_pool(x);

    let head_in = match dropout_rng {
        Some(rng) if config.dropout > 0.0 => tape.dropout(features, config.dropout, rng)?,
        _ => features,
    };
    let (cw, cb) = (tape.param(params, "cls.weight")?, tape.param(params, "cls.bias")?);
    let scores = tape.linear(head_in, cw, cb)?;

    let (w1, b1) = (tape.param(params, "att1.weight")?, tape.param(params, "att1.bias")?);
    let (w2, b2) = (tape.param(params, "att2.weight")?, tape.param(params, "att2.bias")?);
    let hidden = tape.linear(features, w1, b1)?;
    let hidden = tape.relu(hidden);
    let logit = tape.linear(hidden, w2, b2)?;
    let attention = tape.sigmoid(logit);
    Ok(SnippetNodes {
        features,
        scores,
        attention,
    })
}

/// `F = Σ λ_i · scores_i / K` on the tape; λ is ignored when attention is off.
pub fn consensus_on_tape<S: Scalar>(
    tape: &mut Tape<S>,
    snippets: &[SnippetNodes],
    attention: bool,
) -> Result<NodeId> {
    let (first, rest) = snippets
        .split_first()
        .ok_or_else(|| Error::Contract("consensus over zero snippets".into()))?;
    let term = |tape: &mut Tape<S>, s: &SnippetNodes| {
        if attention {
            tape.mul_scalar(s.scores, s.attention)
        } else {
            Ok(s.scores)
        }
    };
    let mut acc = term(tape, first)?;
    for s in rest {
        let t = term(tape, s)?;
        acc = tape.add(acc, t)?;
    }
    Ok(tape.scale(acc, S::from_f64_lossy(1.0 / snippets.len() as f64)))
}

fn check_input<S: Scalar>(modality: Modality, frames: &Tensor<S>) -> Result<()> {
    if frames.rank() != 4 || frames.shape()[0] != modality.channels() {
        return Err(Error::Input(format!(
            "{modality} snippet needs [{}, L, H, W], got {:?}",
            modality.channels(),
            frames.shape()
        )));
    }
    Ok(())
}

/// Consensus probabilities and focal loss of one clip's K training
/// snippets, recorded on `tape`.
#[allow(clippy::too_many_arguments)]
pub fn clip_loss_on_tape<S: Scalar, R: Rng>(
    tape: &mut Tape<S>,
    params: &ParamSet<S>,
    config: &EncoderConfig,
    modality: Modality,
    snippets: Vec<Tensor<S>>,
    target: usize,
    focal: &FocalConfig,
    mut dropout_rng: Option<&mut R>,
) -> Result<(NodeId, NodeId)> {
    let mut nodes = Vec::with_capacity(snippets.len());
    for frames in snippets {
        check_input(modality, &frames)?;
        let input = tape.input(frames);
        nodes.push(encode_on_tape(tape, params, config, input, dropout_rng.as_deref_mut())?);
    }
    let f = consensus_on_tape(tape, &nodes, config.attention)?;
    let p = tape.softmax(f)?;
    let loss = tape.focal_loss(p, target, focal.alpha, focal.gamma)?;
    Ok((p, loss))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SnippetOutput {
    pub features: Vec<f32>,
    pub class_scores: Vec<f32>,
    pub attention: f32,
}

/// Inference-mode encoding of one [C, L, H, W] snippet.
pub fn encode_snippet(
    config: &EncoderConfig,
    params: &ParamSet<f32>,
    modality: Modality,
    frames: &Tensor<f32>,
) -> Result<SnippetOutput> {
    check_input(modality, frames)?;
    let mut tape = Tape::new();
    let input = tape.input(frames.clone());
    let n = encode_on_tape::<f32, rand_chacha::ChaCha8Rng>(&mut tape, params, config, input, None)?;
    Ok(SnippetOutput {
        features: tape.value(n.features).data().to_vec(),
        class_scores: tape.value(n.scores).data().to_vec(),
        attention: tape.value(n.attention).data()[0],
    })
}

/// `F = Σ λ_i · e_i / K`, with λ forced to 1 when `attention` is false.
pub fn consensus(outputs: &[SnippetOutput], attention: bool) -> Result<Vec<f64>> {
    let first = outputs
        .first()
        .ok_or_else(|| Error::Contract("consensus over zero snippets".into()))?;
    let m = first.class_scores.len();
    let mut f = vec![0.0f64; m];
    for o in outputs {
        if o.class_scores.len() != m {
            return Err(Error::Input("snippet score lengths differ".into()));
        }
        let lambda = if attention { o.attention as f64 } else { 1.0 };
        for (acc, &s) in f.iter_mut().zip(&o.class_scores) {
            *acc += lambda * s as f64;
        }
    }
    let k = outputs.len() as f64;
    Ok(f.into_iter().map(|v| v / k).collect())
}

pub fn class_probs(f: &[f64]) -> Vec<f64> {
    crate::tensor::softmax(f)
}

/// Elementwise mean of per-modality video scores.
pub fn fuse_modalities(scores: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = scores
        .first()
        .ok_or_else(|| Error::Input("fusion needs at least one modality".into()))?;
    if scores.iter().any(|s| s.len() != first.len()) {
        return Err(Error::Input("modality score vectors differ in length".into()));
    }
    let n = scores.len() as f64;
    Ok((0..first.len())
        .map(|i| scores.iter().map(|s| s[i]).sum::<f64>() / n)
        .collect())
}

/// Index of the largest entry; the smallest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A trained stream for one modality.
#[derive(Clone, Debug)]
pub struct Model {
    pub modality: Modality,
    pub config: EncoderConfig,
    pub params: ParamSet<f32>,
}

impl Model {
    pub fn new(config: EncoderConfig, modality: Modality, rng: &mut impl Rng) -> Result<Self> {
        let params = init_params(&config, modality, rng)?;
        Ok(Self {
            modality,
            config,
            params,
        })
    }

    /// Mean of per-snippet class probabilities over the dense test snippets.
    pub fn predict_clip(&self, clip: &Clip, sampler: &SamplerConfig) -> Result<Vec<f64>> {
        if clip.modality != self.modality {
            return Err(Error::Input(format!(
                "{} model given a {} clip",
                self.modality, clip.modality
            )));
        }
        let snippets = dense_snippets(clip, sampler)?;
        let mut mean = vec![0.0f64; self.config.num_classes];
        for s in &snippets {
            let out = encode_snippet(&self.config, &self.params, self.modality, &s.frames)?;
            let p = class_probs(&consensus(std::slice::from_ref(&out), self.config.attention)?);
            mean.iter_mut().zip(&p).for_each(|(m, v)| *m += v);
        }
        let n = snippets.len() as f64;
        Ok(mean.into_iter().map(|m| m / n).collect())
    }

    /// Writes the checkpoint, led by a `modality:<name>` header entry.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tagged = ParamSet::new();
        tagged.insert(format!("{MODALITY_TAG}{}", self.modality), Tensor::zeros(&[1]))?;
        for p in self.params.iter() {
            tagged.insert(p.name(), p.value().clone())?;
        }
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        write_checkpoint(&tagged, &mut w).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, config: EncoderConfig) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let stored = read_checkpoint(BufReader::new(file), path)?;
        let modality = stored
            .names()
            .next()
            .and_then(|n| n.strip_prefix(MODALITY_TAG))
            .ok_or_else(|| Error::format(path, "checkpoint has no modality header"))?
            .parse::<Modality>()
            .map_err(|e| Error::format(path, e.to_string()))?;
        let mut params = init_params(&config, modality, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        let mut body = ParamSet::new();
        for p in stored.iter().skip(1) {
            body.insert(p.name(), p.value().clone())?;
        }
        params
            .load_values(&body)
            .map_err(|e| Error::format(path, e.to_string()))?;
        Ok(Self {
            modality,
            config,
            params,
        })
    }
}

const MODALITY_TAG: &str = "modality:";

/// Fused prediction for one video from one clip per modality stream.
pub fn predict_video(
    models: &[&Model],
    clips: &[&Clip],
    sampler: &SamplerConfig,
) -> Result<(usize, Vec<f64>)> {
    if models.is_empty() {
        return Err(Error::Config("no modality models given".into()));
    }
    let mut per_modality = Vec::with_capacity(models.len());
    for model in models {
        let clip = clips
            .iter()
            .find(|c| c.modality == model.modality)
            .ok_or_else(|| Error::Config(format!("no {} data for this video", model.modality)))?;
        per_modality.push(model.predict_clip(clip, sampler)?);
    }
    let fused = fuse_modalities(&per_modality)?;
    Ok((argmax(&fused), fused))
}
