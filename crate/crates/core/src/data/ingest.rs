//! Manifest validation and frame loading.

use std::collections::BTreeSet;
use std::path::Path;

use super::frames::{count_frames, frame_path, read_frame, RgbFrame};
use super::{DatasetManifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::train::group_scores;

/// Problems found while validating a manifest, one line per issue.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub issues: Vec<String>,
}

impl ValidationReport {
    fn push(&mut self, clip: &str, message: impl AsRef<str>) {
        self.issues.push(format!("{clip}: {}", message.as_ref()));
    }

    pub fn is_clean(&self) -> bool {
        self.issues.is_empty()
    }
}

fn check_entry(manifest: &DatasetManifest, e: &ManifestEntry, report: &mut ValidationReport) {
    let id = e.clip_id.as_str();
    if e.subject_id.trim().is_empty() {
        report.push(id, "empty subject_id");
    }
    if let Err(err) = group_scores(e.updrs_raw) {
        report.push(id, err.to_string());
    }
    if !(e.fps > 0.0) {
        report.push(id, format!("fps {} is not positive", e.fps));
    }
    let dir = manifest.frame_dir(e);
    if !dir.is_dir() {
        report.push(id, format!("frame directory {} is missing", dir.display()));
        return;
    }
    let on_disk = count_frames(&dir);
    if on_disk != e.frame_count {
        report.push(id, format!("manifest lists {} frames, found {on_disk}", e.frame_count));
    }
    if on_disk < 2 {
        report.push(id, "needs at least two frames");
        return;
    }
    let mut size = None;
    for i in 0..on_disk {
        match image::image_dimensions(frame_path(&dir, i)) {
            Ok(d) if size.is_none() => size = Some(d),
            Ok(d) if Some(d) != size => {
                report.push(id, format!("frame {i} is {}x{}, expected {:?}", d.0, d.1, size.unwrap()));
                break;
            }
            Ok(_) => {}
            Err(err) => {
                report.push(id, format!("frame {i} unreadable: {err}"));
                break;
            }
        }
    }
}

/// Validates every manifest entry against the files on disk; all problems
/// are reported together.
pub fn validate_manifest(manifest: &DatasetManifest) -> ValidationReport {
    let mut report = ValidationReport::default();
    let mut seen = BTreeSet::new();
    if manifest.entries.is_empty() {
        report.issues.push("manifest has no entries".into());
    }
    for e in &manifest.entries {
        if !seen.insert(e.clip_id.as_str()) {
            report.push(&e.clip_id, "duplicate clip_id");
        }
        check_entry(manifest, e, &mut report);
    }
    report
}

pub fn ingest(manifest_path: &Path) -> Result<DatasetManifest> {
    let manifest = DatasetManifest::load(manifest_path)?;
    let report = validate_manifest(&manifest);
    if !report.is_clean() {
        return Err(Error::Validation(report.issues));
    }
    Ok(manifest)
}

/// Every frame of `entry`, resized to `size` (width, height).
pub fn load_video_frames(manifest: &DatasetManifest, entry: &ManifestEntry, size: [usize; 2]) -> Result<Vec<RgbFrame>> {
    let dir = manifest.frame_dir(entry);
    (0..entry.frame_count)
        .map(|i| read_frame(&frame_path(&dir, i)).map(|f| f.resize(size[0], size[1])))
        .collect()
}
