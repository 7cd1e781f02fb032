//! Content-addressed artifact store: `<root>/<stage>/<key>/`, where the key
//! hashes every input the stage reads.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Environment variable naming the cache root.
pub const CACHE_ENV: &str = "MBNET_CACHE";

const COMPLETE: &str = ".complete";

/// Builds a cache key from labelled parts; labels keep adjacent parts from
/// aliasing.
#[derive(Clone, Debug, Default)]
pub struct KeyBuilder(Sha256);

impl KeyBuilder {
    pub fn new(stage: &str) -> Self {
        let mut k = Self::default();
        k.part("stage", stage.as_bytes());
        k
    }

    pub fn part(&mut self, label: &str, bytes: &[u8]) -> &mut Self {
        for chunk in [label.as_bytes(), bytes] {
            self.0.update((chunk.len() as u64).to_le_bytes());
            self.0.update(chunk);
        }
        self
    }

    pub fn text(&mut self, label: &str, value: &str) -> &mut Self {
        self.part(label, value.as_bytes())
    }

    pub fn finish(&self) -> String {
        hex::encode(self.0.clone().finalize())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct StageStats {
    pub hits: usize,
    pub misses: usize,
}

#[derive(Debug)]
pub struct Cache {
    root: PathBuf,
    stats: BTreeMap<String, StageStats>,
}

impl Cache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self {
            root: root.into(),
            stats: BTreeMap::new(),
        }
    }

    /// `$MBNET_CACHE` if set, else `fallback`.
    pub fn from_env(fallback: impl Into<PathBuf>) -> Self {
        match std::env::var_os(CACHE_ENV) {
            Some(root) if !root.is_empty() => Self::new(root),
            _ => Self::new(fallback),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stats(&self) -> &BTreeMap<String, StageStats> {
        &self.stats
    }

    /// Directory holding the artifacts of `key`, produced by `fill` on a
    /// miss. A partially written entry is discarded and rebuilt.
    pub fn get_or_fill(
        &mut self,
        stage: &str,
        key: &str,
        fill: impl FnOnce(&Path) -> Result<()>,
    ) -> Result<PathBuf> {
        let dir = self.root.join(stage).join(key);
        let stats = self.stats.entry(stage.to_string()).or_default();
        if dir.join(COMPLETE).is_file() {
            stats.hits += 1;
            return Ok(dir);
        }
        stats.misses += 1;
        let tmp = self.root.join(stage).join(format!("{key}.partial"));
        for d in [&tmp, &dir] {
            if d.exists() {
                fs::remove_dir_all(d).map_err(|e| Error::io(d, e))?;
            }
        }
        fs::create_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
        if let Err(e) = fill(&tmp) {
            // Best effort; a leftover is removed by the next attempt anyway.
            let _ = fs::remove_dir_all(&tmp);
            return Err(e);
        }
        fs::write(tmp.join(COMPLETE), key).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &dir).map_err(|e| Error::io(&dir, e))?;
        Ok(dir)
    }
}

/// Hash of a file's bytes.
pub fn file_digest(path: &Path) -> Result<[u8; 32]> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(Sha256::digest(&bytes).into())
}
