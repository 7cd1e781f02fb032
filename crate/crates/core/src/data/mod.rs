//! Datasets: synthetic generation, manifests, ingestion and frame storage.

pub mod frames;
pub mod ingest;
pub mod synth;
pub mod texture;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ingest::{ingest, load_video_frames, ValidationReport};
pub use synth::{generate_synthetic, ClassSpec, SynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Hand,
    Gait,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Hand => "hand",
            Task::Gait => "gait",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hand" => Ok(Task::Hand),
            "gait" => Ok(Task::Gait),
            other => Err(Error::Config(format!("unknown task `{other}` (hand, gait)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub clip_id: String,
    pub subject_id: String,
    pub task: Task,
    pub updrs_raw: u8,
    /// Relative to the manifest root.
    pub frame_dir: PathBuf,
    pub frame_count: usize,
    pub fps: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    #[serde(skip)]
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl DatasetManifest {
    /// Reads `path`; entry directories resolve against its parent.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest =
            serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
        manifest.root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn frame_dir(&self, entry: &ManifestEntry) -> PathBuf {
        self.root.join(&entry.frame_dir)
    }

    pub fn for_task(&self, task: Task) -> Vec<&ManifestEntry> {
        self.entries.iter().filter(|e| e.task == task).collect()
    }
}
