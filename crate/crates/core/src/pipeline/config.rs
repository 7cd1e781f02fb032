use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::flow::{TvL1Params, DEFAULT_FLOW_BOUND};
use crate::model::EncoderConfig;
use crate::motion::DEFAULT_MB_BOUND;
use crate::sampling::{Modality, SamplerConfig};
use crate::train::TrainConfig;

/// How stored frames, flow and motion boundaries become network input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InputConfig {
    /// (width, height) fed to the encoder.
    pub size: [usize; 2],
    /// Flow is clamped to ±bound then divided by it.
    pub flow_bound: f32,
    /// Same for motion boundaries, which are derivatives and rarely exceed 1.
    pub mb_bound: f32,
}

impl Default for InputConfig {
    fn default() -> Self {
        Self {
            size: [16, 16],
            flow_bound: DEFAULT_FLOW_BOUND,
            mb_bound: DEFAULT_MB_BOUND,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoldsConfig {
    pub k: usize,
    /// Folds to train and evaluate; empty means all of them.
    pub run: Vec<usize>,
}

impl Default for FoldsConfig {
    fn default() -> Self {
        Self { k: 5, run: Vec::new() }
    }
}

impl FoldsConfig {
    pub fn selected(&self) -> Vec<usize> {
        if self.run.is_empty() {
            (0..self.k).collect()
        } else {
            self.run.clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub task: Task,
    /// Relative paths resolve against the config file's directory.
    pub manifest: PathBuf,
    pub output: PathBuf,
    /// Streams to train; the report fuses all of them.
    pub modalities: Vec<Modality>,
    pub input: InputConfig,
    pub flow: TvL1Params,
    pub sampler: SamplerConfig,
    pub model: EncoderConfig,
    pub train: TrainConfig,
    pub folds: FoldsConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            task: Task::Hand,
            manifest: PathBuf::from("data/manifest.json"),
            output: PathBuf::from("out"),
            modalities: vec![Modality::MotionBoundaries],
            input: InputConfig::default(),
            flow: TvL1Params::default(),
            sampler: SamplerConfig::default(),
            model: EncoderConfig::default(),
            train: TrainConfig::default(),
            folds: FoldsConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config: PipelineConfig = toml::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        config.manifest = base.join(&config.manifest);
        config.output = base.join(&config.output);
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::Config("at least one modality is required".into()));
        }
        let mut sorted = self.modalities.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.modalities.len() {
            return Err(Error::Config(format!("duplicate modality in {:?}", self.modalities)));
        }
        if self.input.size.iter().any(|&s| s < 3) {
            return Err(Error::Config(format!("input size {:?} is below 3x3", self.input.size)));
        }
        if !(self.input.flow_bound > 0.0 && self.input.mb_bound > 0.0) {
            return Err(Error::Config("clamp bounds must be positive".into()));
        }
        if let Some(f) = self.folds.run.iter().find(|&&f| f >= self.folds.k) {
            return Err(Error::Config(format!("fold {f} outside 0..{}", self.folds.k)));
        }
        self.flow.validate()?;
        self.sampler.validate()?;
        self.model.validate()?;
        self.train.validate()
    }
}
