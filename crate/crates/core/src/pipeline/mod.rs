//! Ingest, extract-flow, extract-mb, per-modality per-fold training and
//! evaluation, with every expensive stage cached by content hash.

pub mod cache;
pub mod config;
pub mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use crate::data::frames::{frame_path, read_frame, RgbFrame};
use crate::data::{ingest, load_video_frames, DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::flow::flo::{read_flo, write_flo};
use crate::flow::{estimate_flow, flow_to_input, FlowField, TvL1Params};
use crate::model::Model;
use crate::motion::{mb_to_input, motion_boundary, read_mb, write_mb, MotionBoundaryField};
use crate::rng::stream;
use crate::sampling::{Clip, Modality};
use crate::tensor::Tensor;
use crate::train::{evaluate, group_scores, subject_folds, train, EpochLog, FoldPlan, Video};

pub use cache::{Cache, StageStats, CACHE_ENV};
pub use config::{FoldsConfig, InputConfig, PipelineConfig};
pub use report::{FoldReport, Report, StreamReport, FUSED, SCHEMA_VERSION};

/// Bumped whenever an artifact's on-disk meaning changes.
const ARTIFACT_VERSION: &str = "1";

pub const FOLDS_FILE: &str = "folds.json";
pub const REPORT_FILE: &str = "report.txt";

pub fn flow_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("flow_{index:04}.flo"))
}

pub fn mb_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("mb_{index:04}.mb"))
}

fn count_files(dir: &Path, path: fn(&Path, usize) -> PathBuf) -> usize {
    (0..).take_while(|&i| path(dir, i).is_file()).count()
}

/// Writes the N - 1 flow fields of a clip, computed at the stored frame
/// resolution. Returns how many were written.
pub fn extract_clip_flow(
    manifest: &DatasetManifest,
    entry: &ManifestEntry,
    params: &TvL1Params,
    out: &Path,
) -> Result<usize> {
    let dir = manifest.frame_dir(entry);
    let mut prev = read_frame(&frame_path(&dir, 0))?.luma();
    for i in 1..entry.frame_count {
        let next = read_frame(&frame_path(&dir, i))?.luma();
        write_flo(&flow_path(out, i - 1), &estimate_flow(&prev, &next, params)?)?;
        prev = next;
    }
    Ok(entry.frame_count - 1)
}

pub fn read_flow_dir(dir: &Path) -> Result<Vec<FlowField>> {
    let n = count_files(dir, flow_path);
    if n == 0 {
        return Err(Error::Input(format!("no flow files in {}", dir.display())));
    }
    (0..n).map(|i| read_flo(&flow_path(dir, i))).collect()
}

pub fn read_mb_dir(dir: &Path) -> Result<Vec<MotionBoundaryField>> {
    let n = count_files(dir, mb_path);
    if n == 0 {
        return Err(Error::Input(format!("no motion boundary files in {}", dir.display())));
    }
    (0..n).map(|i| read_mb(&mb_path(dir, i))).collect()
}

/// One motion-boundary file per flow file in `flow_dir`.
pub fn extract_clip_mb(flow_dir: &Path, out: &Path) -> Result<usize> {
    let flows = read_flow_dir(flow_dir)?;
    for (i, f) in flows.iter().enumerate() {
        write_mb(&mb_path(out, i), &motion_boundary(f)?)?;
    }
    Ok(flows.len())
}

/// RGB frames as [3, T, H, W] in [-1, 1].
pub fn rgb_to_input(frames: &[RgbFrame]) -> Result<Tensor<f32>> {
    let first = frames.first().ok_or_else(|| Error::Input("clip has no frames".into()))?;
    let (w, h) = (first.width, first.height);
    let mut data = Vec::with_capacity(3 * frames.len() * w * h);
    for c in 0..3 {
        for f in frames {
            if (f.width, f.height) != (w, h) {
                return Err(Error::Input("frames differ in size".into()));
            }
            data.extend(f.planes[c].iter().map(|v| v * 2.0 - 1.0));
        }
    }
    Tensor::new(vec![3, frames.len(), h, w], data)
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("config serializes")
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value).expect("serializes") + "\n").map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn model_path(models: &Path, modality: Modality, fold: usize) -> PathBuf {
    models.join(modality.name()).join(format!("fold{fold}.ckpt"))
}

pub fn log_path(models: &Path, modality: Modality, fold: usize) -> PathBuf {
    models.join(modality.name()).join(format!("fold{fold}.json"))
}

/// Trained models and logs, keyed by modality then fold.
pub type FoldModels = BTreeMap<Modality, BTreeMap<usize, (Model, Option<Vec<EpochLog>>)>>;

#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: Report,
    pub text: String,
}

pub struct Pipeline {
    pub config: PipelineConfig,
    manifest: DatasetManifest,
    /// The configured task's entries, ordered by clip id.
    entries: Vec<ManifestEntry>,
    cache: Cache,
    frame_keys: BTreeMap<String, String>,
    flow: BTreeMap<String, (String, PathBuf)>,
    mb: BTreeMap<String, (String, PathBuf)>,
}

impl Pipeline {
    pub fn open(config: PipelineConfig, cache: Cache) -> Result<Self> {
        config.validate()?;
        let manifest =
            ingest(&config.manifest).map_err(|e| Error::stage("ingest", config.manifest.display().to_string(), e))?;
        let mut entries: Vec<ManifestEntry> = manifest.for_task(config.task).into_iter().cloned().collect();
        if entries.is_empty() {
            return Err(Error::Config(format!("manifest has no {} clips", config.task)));
        }
        entries.sort_by(|a, b| a.clip_id.cmp(&b.clip_id));
        Ok(Self {
            config,
            manifest,
            entries,
            cache,
            frame_keys: BTreeMap::new(),
            flow: BTreeMap::new(),
            mb: BTreeMap::new(),
        })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn cache_stats(&self) -> &BTreeMap<String, StageStats> {
        self.cache.stats()
    }

    fn frame_key(&mut self, entry: &ManifestEntry) -> Result<String> {
        if let Some(k) = self.frame_keys.get(&entry.clip_id) {
            return Ok(k.clone());
        }
        let dir = self.manifest.frame_dir(entry);
        let mut key = cache::KeyBuilder::new("frames");
        for i in 0..entry.frame_count {
            key.part("frame", &cache::file_digest(&frame_path(&dir, i))?);
        }
        let k = key.finish();
        self.frame_keys.insert(entry.clip_id.clone(), k.clone());
        Ok(k)
    }

    fn flow_dir(&mut self, entry: &ManifestEntry) -> Result<(String, PathBuf)> {
        if let Some(hit) = self.flow.get(&entry.clip_id) {
            return Ok(hit.clone());
        }
        let frames = self.frame_key(entry)?;
        let params = &self.config.flow;
        let key = cache::KeyBuilder::new("extract-flow")
            .text("version", ARTIFACT_VERSION)
            .text("frames", &frames)
            .text("params", &json(params))
            .finish();
        let manifest = &self.manifest;
        let dir = self
            .cache
            .get_or_fill("extract-flow", &key, |out| extract_clip_flow(manifest, entry, params, out).map(drop))?;
        self.flow.insert(entry.clip_id.clone(), (key.clone(), dir.clone()));
        Ok((key, dir))
    }

    fn mb_dir(&mut self, entry: &ManifestEntry) -> Result<(String, PathBuf)> {
        if let Some(hit) = self.mb.get(&entry.clip_id) {
            return Ok(hit.clone());
        }
        let (flow_key, flow_dir) = self.flow_dir(entry)?;
        let key = cache::KeyBuilder::new("extract-mb")
            .text("version", ARTIFACT_VERSION)
            .text("flow", &flow_key)
            .finish();
        let dir = self
            .cache
            .get_or_fill("extract-mb", &key, |out| extract_clip_mb(&flow_dir, out).map(drop))
            .map_err(|e| Error::stage("extract-mb", entry.clip_id.as_str(), e))?;
        self.mb.insert(entry.clip_id.clone(), (key.clone(), dir.clone()));
        Ok((key, dir))
    }

    /// Runs flow extraction for every clip.
    pub fn extract_flow(&mut self) -> Result<()> {
        for entry in self.entries.clone() {
            self.flow_dir(&entry)
                .map_err(|e| Error::stage("extract-flow", entry.clip_id.as_str(), e))?;
        }
        Ok(())
    }

    pub fn extract_mb(&mut self) -> Result<()> {
        self.extract_flow()?;
        for entry in self.entries.clone() {
            self.mb_dir(&entry)?;
        }
        Ok(())
    }

    /// Key of the stored data a modality's input is built from.
    fn data_key(&mut self, entry: &ManifestEntry, modality: Modality) -> Result<String> {
        Ok(match modality {
            Modality::Rgb => self.frame_key(entry)?,
            Modality::Flow => self.flow_dir(entry)?.0,
            Modality::MotionBoundaries => self.mb_dir(entry)?.0,
        })
    }

    fn load_clip(&mut self, entry: &ManifestEntry, modality: Modality) -> Result<Clip> {
        let [w, h] = self.config.input.size;
        let data = match modality {
            Modality::Rgb => rgb_to_input(&load_video_frames(&self.manifest, entry, [w, h])?)?,
            Modality::Flow => {
                let (_, dir) = self.flow_dir(entry)?;
                let flows: Vec<FlowField> = read_flow_dir(&dir)?.iter().map(|f| f.resize(w, h)).collect();
                flow_to_input(&flows, self.config.input.flow_bound)?
            }
            Modality::MotionBoundaries => {
                let (_, dir) = self.mb_dir(entry)?;
                let fields: Vec<MotionBoundaryField> = read_mb_dir(&dir)?.iter().map(|f| f.resize(w, h)).collect();
                mb_to_input(&fields, self.config.input.mb_bound)?
            }
        };
        Clip::new(entry.clip_id.as_str(), entry.subject_id.as_str(), modality, data)
    }

    /// Every clip of the task with one stream per configured modality,
    /// extracting flow and motion boundaries as needed.
    pub fn load_videos(&mut self) -> Result<Vec<Video>> {
        let modalities = self.config.modalities.clone();
        if modalities.iter().any(|&m| m != Modality::Rgb) {
            self.extract_flow()?;
        }
        if modalities.contains(&Modality::MotionBoundaries) {
            self.extract_mb()?;
        }
        let mut videos = Vec::with_capacity(self.entries.len());
        for entry in self.entries.clone() {
            let label = group_scores(entry.updrs_raw).map_err(|e| Error::stage("load", entry.clip_id.as_str(), e))?;
            let mut streams = Vec::with_capacity(modalities.len());
            for &m in &modalities {
                streams.push(
                    self.load_clip(&entry, m)
                        .map_err(|e| Error::stage("load", entry.clip_id.as_str(), e))?,
                );
            }
            videos.push(Video {
                clip_id: entry.clip_id.clone(),
                subject_id: entry.subject_id.clone(),
                label,
                streams,
            });
        }
        Ok(videos)
    }

    pub fn fold_plan(&self) -> Result<FoldPlan> {
        let subjects: Vec<&str> = self.entries.iter().map(|e| e.subject_id.as_str()).collect();
        subject_folds(&subjects, self.config.folds.k, &mut stream(self.config.seed, "folds"))
    }

    /// Trains (or fetches from the cache) the model of one modality and fold.
    pub fn train_fold(
        &mut self,
        videos: &[Video],
        plan: &FoldPlan,
        modality: Modality,
        fold: usize,
    ) -> Result<(Model, Vec<EpochLog>)> {
        let item = format!("{modality} fold {fold}");
        let held = plan.validation_subjects(fold);
        let (heldout, training): (Vec<&Video>, Vec<&Video>) =
            videos.iter().partition(|v| held.contains(v.subject_id.as_str()));
        let c = &self.config;
        let mut key = cache::KeyBuilder::new("train");
        key.text("version", ARTIFACT_VERSION)
            .text("modality", modality.name())
            .part("fold", &(fold as u64).to_le_bytes())
            .part("seed", &c.seed.to_le_bytes())
            .text("plan", &json(plan))
            .text("input", &json(&c.input))
            .text("sampler", &json(&c.sampler))
            .text("model", &json(&c.model))
            .text("train", &json(&c.train));
        let entries: BTreeMap<String, ManifestEntry> =
            self.entries.iter().map(|e| (e.clip_id.clone(), e.clone())).collect();
        for v in training.iter().chain(&heldout) {
            let data = self.data_key(&entries[&v.clip_id], modality)?;
            key.text("clip", &v.clip_id)
                .part("label", &(v.label as u64).to_le_bytes())
                .text("data", &data);
        }
        let key = key.finish();

        let c = &self.config;
        let dir = self
            .cache
            .get_or_fill("train", &key, |out| {
                let mut init = stream(c.seed, &format!("init/{modality}/{fold}"));
                let mut model = Model::new(c.model.clone(), modality, &mut init)?;
                let seed: u64 = stream(c.seed, &format!("train/{modality}/{fold}")).gen();
                let logs = train(&mut model, &training, &heldout, &c.sampler, &c.train, seed)?;
                model.save(&out.join("model.ckpt"))?;
                write_json(&out.join("log.json"), &logs)
            })
            .map_err(|e| Error::stage("train", item.as_str(), e))?;
        let model = Model::load(&dir.join("model.ckpt"), self.config.model.clone())?;
        let log_file = dir.join("log.json");
        let text = fs::read_to_string(&log_file).map_err(|e| Error::io(&log_file, e))?;
        let logs = serde_json::from_str(&text).map_err(|e| Error::format(&log_file, e.to_string()))?;
        Ok((model, logs))
    }

    /// Trains every configured modality on every selected fold and writes
    /// models, logs, the fold plan and the report under the output dir.
    pub fn run(&mut self) -> Result<RunOutput> {
        let videos = self.load_videos()?;
        let plan = self.fold_plan()?;
        let out = self.config.output.clone();
        let models_dir = out.join("models");
        create_dir(&out)?;
        write_json(&out.join(FOLDS_FILE), &plan)?;

        let mut trained = FoldModels::new();
        for modality in self.config.modalities.clone() {
            create_dir(&models_dir.join(modality.name()))?;
            for fold in self.config.folds.selected() {
                let (model, logs) = self.train_fold(&videos, &plan, modality, fold)?;
                model.save(&model_path(&models_dir, modality, fold))?;
                write_json(&log_path(&models_dir, modality, fold), &logs)?;
                trained.entry(modality).or_default().insert(fold, (model, Some(logs)));
            }
        }
        let report = build_report(&self.config, &videos, &plan, &trained)
            .map_err(|e| Error::stage("evaluate", REPORT_FILE, e))?;
        let text = report.to_text();
        let path = out.join(REPORT_FILE);
        fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
        Ok(RunOutput { report, text })
    }
}

/// Loads `models/<modality>/fold<i>.ckpt` (and its log if present) for
/// every modality and selected fold.
pub fn load_fold_models(config: &PipelineConfig, models: &Path) -> Result<FoldModels> {
    let mut out = FoldModels::new();
    for &modality in &config.modalities {
        for fold in config.folds.selected() {
            let path = model_path(models, modality, fold);
            if !path.is_file() {
                return Err(Error::Config(format!("missing {modality} model for fold {fold}: {}", path.display())));
            }
            let model = Model::load(&path, config.model.clone())?;
            if model.modality != modality {
                return Err(Error::Config(format!("{} holds a {} model", path.display(), model.modality)));
            }
            let log_file = log_path(models, modality, fold);
            let logs = match fs::read_to_string(&log_file) {
                Ok(text) => Some(serde_json::from_str(&text).map_err(|e| Error::format(&log_file, e.to_string()))?),
                Err(_) => None,
            };
            out.entry(modality).or_default().insert(fold, (model, logs));
        }
    }
    Ok(out)
}

/// One stream per trained modality plus the fused stream.
pub fn build_report(config: &PipelineConfig, videos: &[Video], plan: &FoldPlan, trained: &FoldModels) -> Result<Report> {
    let folds = config.folds.selected();
    let mut streams = Vec::new();
    for &modality in &config.modalities {
        let per_fold = trained
            .get(&modality)
            .ok_or_else(|| Error::Config(format!("no {modality} models")))?;
        let mut models = Vec::with_capacity(folds.len());
        let mut logs = Vec::with_capacity(folds.len());
        for &fold in &folds {
            let (model, log) = per_fold
                .get(&fold)
                .ok_or_else(|| Error::Config(format!("missing {modality} model for fold {fold}")))?;
            models.push((fold, vec![model.clone()]));
            logs.push(log.as_deref());
        }
        let eval = evaluate(plan, videos, &models, &config.sampler)?;
        streams.push(StreamReport::new(modality.name(), vec![modality.name().into()], &eval, &logs));
    }
    let fused: Vec<(usize, Vec<Model>)> = folds
        .iter()
        .map(|&fold| {
            let models = config.modalities.iter().map(|m| trained[m][&fold].0.clone()).collect();
            (fold, models)
        })
        .collect();
    let eval = evaluate(plan, videos, &fused, &config.sampler)?;
    let names = config.modalities.iter().map(|m| m.name().to_string()).collect();
    streams.push(StreamReport::new(FUSED, names, &eval, &[]));

    let subjects: BTreeSet<&str> = videos.iter().map(|v| v.subject_id.as_str()).collect();
    Ok(Report {
        schema_version: SCHEMA_VERSION,
        task: config.task.to_string(),
        seed: config.seed,
        clips: videos.len(),
        subjects: subjects.len(),
        k: plan.k,
        streams,
    })
}
