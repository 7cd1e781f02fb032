//! Segment sampling for training, dense snippets for testing, and
//! snippet-level augmentation.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::GrayImage;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Rgb,
    Flow,
    #[serde(rename = "mb")]
    MotionBoundaries,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Rgb, Modality::Flow, Modality::MotionBoundaries];

    pub fn channels(self) -> usize {
        match self {
            Modality::Rgb => 3,
            Modality::Flow | Modality::MotionBoundaries => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Rgb => "rgb",
            Modality::Flow => "flow",
            Modality::MotionBoundaries => "mb",
        }
    }

    /// Whether channel 0 is a signed horizontal quantity.
    fn has_horizontal_channel(self) -> bool {
        self != Modality::Rgb
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rgb" => Ok(Modality::Rgb),
            "flow" => Ok(Modality::Flow),
            "mb" => Ok(Modality::MotionBoundaries),
            other => Err(Error::Config(format!("unknown modality `{other}` (rgb, flow, mb)"))),
        }
    }
}

/// One modality of one clip, loaded as [C, T, H, W].
#[derive(Clone, Debug)]
pub struct Clip {
    pub clip_id: String,
    pub subject_id: String,
    pub modality: Modality,
    pub data: Tensor<f32>,
}

impl Clip {
    pub fn new(
        clip_id: impl Into<String>,
        subject_id: impl Into<String>,
        modality: Modality,
        data: Tensor<f32>,
    ) -> Result<Self> {
        if data.rank() != 4 || data.shape()[0] != modality.channels() {
            return Err(Error::Input(format!(
                "{modality} clip needs shape [{}, T, H, W], got {:?}",
                modality.channels(),
                data.shape()
            )));
        }
        Ok(Self {
            clip_id: clip_id.into(),
            subject_id: subject_id.into(),
            modality,
            data,
        })
    }

    pub fn len(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `length` consecutive time steps from `start`, wrapping to the clip
    /// start if the end is reached.
    fn window(&self, start: usize, length: usize) -> Tensor<f32> {
        let [c, t, h, w]: [usize; 4] = self.data.shape().try_into().unwrap();
        let plane = h * w;
        let src = self.data.data();
        let mut out = Vec::with_capacity(c * length * plane);
        for ch in 0..c {
            for j in 0..length {
                let ti = (start + j) % t;
                let o = (ch * t + ti) * plane;
                out.extend_from_slice(&src[o..o + plane]);
            }
        }
        Tensor::from_parts(vec![c, length, h, w], out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snippet {
    pub modality: Modality,
    /// [C, L, H, W]
    pub frames: Tensor<f32>,
    /// Segment index for training snippets, snippet index for test ones.
    pub source_segment: usize,
    pub start: usize,
    pub clip_id: String,
    pub subject_id: String,
    pub transform: Option<Transform>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub k_segments: usize,
    pub train_len: usize,
    pub test_snippets: usize,
    pub test_len: usize,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            k_segments: 4,
            train_len: 32,
            test_snippets: 64,
            test_len: 16,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_segments == 0 || self.train_len == 0 || self.test_snippets == 0 || self.test_len == 0 {
            return Err(Error::Config("sampler counts must all be >= 1".into()));
        }
        Ok(())
    }
}

/// Start index of each training snippet, one per segment.
pub fn segment_starts(n: usize, config: &SamplerConfig, rng: &mut impl Rng) -> Result<Vec<usize>> {
    config.validate()?;
    let k = config.k_segments;
    if n == 0 {
        return Err(Error::Input("cannot sample from an empty clip".into()));
    }
    if n < k {
        return Err(Error::Input(format!("clip of {n} frames cannot be split into {k} segments")));
    }
    let seg = n / k;
    let len = config.train_len;
    Ok((0..k)
        .map(|i| {
            let lo = i * seg;
            let hi_excl = if i + 1 == k { n } else { lo + seg };
            let hi = if hi_excl - lo >= len {
                hi_excl - len
            } else {
                // Short segment: start inside it, avoiding the wrap when the
                // clip leaves room.
                (hi_excl - 1).min(lo.max(n.saturating_sub(len)))
            };
            rng.gen_range(lo..=hi)
        })
        .collect())
}

/// K chronological training snippets, one drawn from each equal segment.
pub fn segment_sample(clip: &Clip, config: &SamplerConfig, rng: &mut impl Rng) -> Result<Vec<Snippet>> {
    let starts = segment_starts(clip.len(), config, rng)?;
    Ok(starts
        .into_iter()
        .enumerate()
        .map(|(i, start)| Snippet {
            modality: clip.modality,
            frames: clip.window(start, config.train_len),
            source_segment: i,
            start,
            clip_id: clip.clip_id.clone(),
            subject_id: clip.subject_id.clone(),
            transform: None,
        })
        .collect())
}

/// Uniformly spaced test starts over `[0, n - len]`.
pub fn dense_starts(n: usize, config: &SamplerConfig) -> Result<Vec<usize>> {
    config.validate()?;
    if n == 0 {
        return Err(Error::Input("cannot sample from an empty clip".into()));
    }
    let span = n.saturating_sub(config.test_len);
    let count = config.test_snippets;
    Ok((0..count)
        .map(|i| {
            if count == 1 {
                span / 2
            } else {
                ((i * span) as f64 / (count - 1) as f64).round() as usize
            }
        })
        .collect())
}

pub fn dense_snippets(clip: &Clip, config: &SamplerConfig) -> Result<Vec<Snippet>> {
    Ok(dense_starts(clip.len(), config)?
        .into_iter()
        .enumerate()
        .map(|(i, start)| Snippet {
            modality: clip.modality,
            frames: clip.window(start, config.test_len),
            source_segment: i,
            start,
            clip_id: clip.clip_id.clone(),
            subject_id: clip.subject_id.clone(),
            transform: None,
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CropPosition {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    Center,
}

impl CropPosition {
    pub const ALL: [CropPosition; 5] = [
        CropPosition::TopLeft,
        CropPosition::TopRight,
        CropPosition::BottomLeft,
        CropPosition::BottomRight,
        CropPosition::Center,
    ];

    fn offset(self, full: (usize, usize), crop: (usize, usize)) -> (usize, usize) {
        let (dx, dy) = (full.0 - crop.0, full.1 - crop.1);
        match self {
            CropPosition::TopLeft => (0, 0),
            CropPosition::TopRight => (dx, 0),
            CropPosition::BottomLeft => (0, dy),
            CropPosition::BottomRight => (dx, dy),
            CropPosition::Center => (dx / 2, dy / 2),
        }
    }
}

/// One spatial transform shared by every frame of a snippet.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transform {
    /// Crop fraction along (x, y).
    pub scale: (f32, f32),
    pub crop: CropPosition,
    pub flip: bool,
}

impl Transform {
    pub fn identity() -> Self {
        Self {
            scale: (1.0, 1.0),
            crop: CropPosition::Center,
            flip: false,
        }
    }

    pub fn describe(&self) -> String {
        let crop = serde_json::to_value(self.crop).unwrap();
        format!(
            "scale={}x{} crop={} flip={}",
            self.scale.0,
            self.scale.1,
            crop.as_str().unwrap(),
            self.flip
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub enabled: bool,
    pub scales: Vec<f32>,
    pub flip_probability: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            scales: vec![1.0, 0.875, 0.75, 0.66],
            flip_probability: 0.5,
        }
    }
}

pub fn random_transform(rng: &mut impl Rng, config: &AugmentConfig) -> Result<Transform> {
    if config.scales.is_empty() || config.scales.iter().any(|s| !(*s > 0.0 && *s <= 1.0)) {
        return Err(Error::Config(format!(
            "augmentation scales must lie in (0, 1], got {:?}",
            config.scales
        )));
    }
    let sx = *config.scales.choose(rng).unwrap();
    let sy = *config.scales.choose(rng).unwrap();
    let crop = *CropPosition::ALL.choose(rng).unwrap();
    let flip = rng.gen_bool(config.flip_probability.clamp(0.0, 1.0));
    Ok(Transform {
        scale: (sx, sy),
        crop,
        flip,
    })
}

/// Applies a random transform; returns the snippet untouched when disabled.
pub fn augment(snippet: &Snippet, rng: &mut impl Rng, config: &AugmentConfig) -> Result<Snippet> {
    if !config.enabled {
        return Ok(snippet.clone());
    }
    let t = random_transform(rng, config)?;
    apply_transform(snippet, &t)
}

/// Crops, resizes back to the original extent, then optionally mirrors.
/// Mirroring negates channel 0 of flow-like modalities.
pub fn apply_transform(snippet: &Snippet, t: &Transform) -> Result<Snippet> {
    let [c, l, h, w]: [usize; 4] = snippet
        .frames
        .shape()
        .try_into()
        .map_err(|_| Error::Input("snippet frames must be [C, L, H, W]".into()))?;
    let cw = (w as f32 * t.scale.0).round() as usize;
    let ch = (h as f32 * t.scale.1).round() as usize;
    if cw == 0 || ch == 0 || cw > w || ch > h {
        return Err(Error::Config(format!("crop {cw}x{ch} does not fit a {w}x{h} frame")));
    }
    let (ox, oy) = t.crop.offset((w, h), (cw, ch));
    let plane = h * w;
    let mut out = Vec::with_capacity(snippet.frames.numel());
    for (index, frame) in snippet.frames.data().chunks_exact(plane).enumerate() {
        let resampled = if (cw, ch) == (w, h) {
            frame.to_vec()
        } else {
            let crop = GrayImage::from_fn(cw, ch, |x, y| frame[(y + oy) * w + x + ox]);
            crop.resize(w, h).data().to_vec()
        };
        let negate = t.flip && index / l == 0 && snippet.modality.has_horizontal_channel();
        for row in resampled.chunks_exact(w) {
            if t.flip {
                out.extend(row.iter().rev().map(|&v| if negate { -v } else { v }));
            } else {
                out.extend_from_slice(row);
            }
        }
    }
    debug_assert_eq!(out.len(), c * l * plane);
    Ok(Snippet {
        frames: Tensor::from_parts(snippet.frames.shape().to_vec(), out),
        transform: Some(t.clone()),
        ..snippet.clone()
    })
}
