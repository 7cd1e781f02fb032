//! Synthetic clips standing in for clinical recordings: a textured object
//! whose motion depends on the severity class, over a textured background
//! that pans at a constant per-clip velocity.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::frames::{frame_path, mask_path, write_frame, write_mask, RgbFrame};
use super::texture::Texture;
use super::{DatasetManifest, ManifestEntry, Task, MANIFEST_FILE};
use crate::error::{Error, Result};
use crate::flow::GrayImage;
use crate::rng::stream;

/// Motion statistics of one severity class; each subject draws its own
/// values uniformly from these ranges.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    /// Pixels.
    pub amplitude: [f64; 2],
    /// Hz.
    pub frequency: [f64; 2],
    /// 1/s; models fatigue.
    pub decay: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub task: Task,
    pub n_subjects: usize,
    pub clips_per_subject: usize,
    /// (width, height)
    pub frame_size: [usize; 2],
    /// Inclusive frame-count range.
    pub frame_count: [usize; 2],
    pub fps: f64,
    /// Pan speed range in pixels per frame; the direction is uniform.
    pub camera_pan: [f64; 2],
    pub classes: Vec<ClassSpec>,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            task: Task::Hand,
            n_subjects: 25,
            clips_per_subject: 4,
            frame_size: [32, 32],
            frame_count: [40, 56],
            fps: 15.0,
            camera_pan: [0.5, 2.0],
            classes: vec![
                ClassSpec {
                    amplitude: [3.0, 4.0],
                    frequency: [1.5, 2.0],
                    decay: [0.0, 0.0],
                },
                ClassSpec {
                    amplitude: [2.0, 2.8],
                    frequency: [1.0, 1.4],
                    decay: [0.3, 0.6],
                },
                ClassSpec {
                    amplitude: [1.0, 1.8],
                    frequency: [0.5, 0.9],
                    decay: [0.8, 1.2],
                },
            ],
            seed: 0,
        }
    }
}

fn overlaps(a: [f64; 2], b: [f64; 2]) -> bool {
    a[0] <= b[1] && b[0] <= a[1]
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.n_subjects == 0 || self.clips_per_subject == 0 {
            return bad("need at least one subject and one clip".into());
        }
        let [w, h] = self.frame_size;
        if w < 16 || h < 16 {
            return bad(format!("frames must be at least 16x16, got {w}x{h}"));
        }
        if self.frame_count[0] < 2 || self.frame_count[0] > self.frame_count[1] {
            return bad(format!("bad frame-count range {:?}", self.frame_count));
        }
        if !(self.fps > 0.0) || !(0.0 <= self.camera_pan[0] && self.camera_pan[0] <= self.camera_pan[1]) {
            return bad("fps must be positive and the pan range ordered".into());
        }
        if self.classes.len() < 2 || self.classes.len() > 3 {
            return bad(format!("need 2 or 3 classes, got {}", self.classes.len()));
        }
        for (i, c) in self.classes.iter().enumerate() {
            for r in [c.amplitude, c.frequency, c.decay] {
                if !(r[0] <= r[1] && r[0] >= 0.0) {
                    return bad(format!("class {i} has an unordered or negative range {r:?}"));
                }
            }
        }
        for i in 0..self.classes.len() {
            for j in i + 1..self.classes.len() {
                let (a, b) = (&self.classes[i], &self.classes[j]);
                if overlaps(a.amplitude, b.amplitude) && overlaps(a.decay, b.decay) {
                    return bad(format!("classes {i} and {j} overlap in both amplitude and decay"));
                }
            }
        }
        Ok(())
    }
}

/// Raw score reported for a subject of class `class`.
fn raw_score(class: usize, rng: &mut impl Rng) -> u8 {
    match class {
        0 => 0,
        1 => rng.gen_range(1..=2),
        _ => rng.gen_range(3..=4),
    }
}

fn draw(range: [f64; 2], rng: &mut impl Rng) -> f64 {
    if range[0] == range[1] {
        range[0]
    } else {
        rng.gen_range(range[0]..range[1])
    }
}

/// Everything needed to re-render a clip; stored as `clip.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClipTruth {
    pub clip_id: String,
    pub subject_id: String,
    pub task: Task,
    pub class: usize,
    pub updrs_raw: u8,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    /// Background displacement per frame (pixels).
    pub camera_pan: [f64; 2],
    pub amplitude: f64,
    pub frequency: f64,
    pub decay: f64,
    pub phase: f64,
    /// Per frame: object centre x, y and the horizontal/vertical radii.
    pub object: Vec<[f64; 4]>,
}

impl ClipTruth {
    /// Envelope `A e^{-d t}` of the oscillation at frame `i`.
    pub fn envelope(&self, i: usize) -> f64 {
        self.amplitude * (-self.decay * i as f64 / self.fps).exp()
    }
}

struct Scene {
    background: Texture,
    object: Texture,
    bg_tint: [f32; 3],
    obj_tint: [f32; 3],
}

fn tint(rng: &mut impl Rng) -> [f32; 3] {
    [rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0), rng.gen_range(0.5..1.0)]
}

/// Ellipse coverage with a one-pixel soft edge.
fn coverage(x: f64, y: f64, o: [f64; 4]) -> f64 {
    let (dx, dy) = ((x - o[0]) / o[2], (y - o[1]) / o[3]);
    let d = (dx * dx + dy * dy).sqrt();
    let scale = o[2].min(o[3]);
    ((1.0 - d) * scale + 0.5).clamp(0.0, 1.0)
}

fn render(scene: &Scene, truth: &ClipTruth, i: usize, base_radius: f64) -> (RgbFrame, Vec<bool>) {
    let (w, h) = (truth.width, truth.height);
    let o = truth.object[i];
    let (px, py) = (truth.camera_pan[0] * i as f64, truth.camera_pan[1] * i as f64);
    let mut mask = Vec::with_capacity(w * h);
    let frame = RgbFrame::from_fn(w, h, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        let bg = scene.background.value((fx - px) as f32, (fy - py) as f32);
        let a = coverage(fx, fy, o);
        mask.push(a >= 0.5);
        // Object texture lives in object coordinates scaled by its radii,
        // so size changes are genuine radial motion.
        let ox = (fx - o[0]) * base_radius / o[2];
        let oy = (fy - o[1]) * base_radius / o[3];
        let fg = scene.object.value(ox as f32, oy as f32);
        let mut px = [0.0; 3];
        for c in 0..3 {
            let b = 0.1 + 0.8 * bg * scene.bg_tint[c];
            let f = 0.1 + 0.8 * fg * scene.obj_tint[c];
            px[c] = (a as f32) * f + (1.0 - a as f32) * b;
        }
        px
    });
    (frame, mask)
}

fn object_track(task: Task, cfg: &SynthConfig, n: usize, p: (f64, f64, f64, f64), rng: &mut impl Rng) -> Vec<[f64; 4]> {
    let [w, h] = cfg.frame_size;
    let (amplitude, frequency, decay, phase) = p;
    let (w, h) = (w as f64, h as f64);
    let omega = std::f64::consts::TAU * frequency;
    match task {
        Task::Hand => {
            let r0 = rng.gen_range(0.22..0.26) * w.min(h);
            let cx = w / 2.0 + rng.gen_range(-2.0..2.0);
            let cy = h / 2.0 + rng.gen_range(-2.0..2.0);
            (0..n)
                .map(|i| {
                    let t = i as f64 / cfg.fps;
                    let r = r0 + amplitude * (-decay * t).exp() * (omega * t + phase).sin();
                    [cx, cy, r, r]
                })
                .collect()
        }
        Task::Gait => {
            let (rx, ry) = (0.12 * w, 0.25 * h);
            let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let x0 = w / 2.0 - dir * w / 4.0;
            let speed = 0.5 * amplitude * frequency / cfg.fps;
            (0..n)
                .map(|i| {
                    let t = i as f64 / cfg.fps;
                    let env = (-decay * t).exp();
                    let travel = (speed * i as f64 * env).min(w / 2.0);
                    let bob = 0.5 * amplitude * env * (omega * t + phase).sin();
                    [x0 + dir * travel, h / 2.0 + bob, rx, ry]
                })
                .collect()
        }
    }
}

/// Renders every clip under `out` and writes `manifest.json` there.
pub fn generate_synthetic(cfg: &SynthConfig, out: &Path) -> Result<DatasetManifest> {
    cfg.validate()?;
    let clips_dir = out.join("clips");
    fs::create_dir_all(&clips_dir).map_err(|e| Error::io(&clips_dir, e))?;
    let classes = cfg.classes.len();
    let mut entries = Vec::new();
    for s in 0..cfg.n_subjects {
        let subject_id = format!("s{s:03}");
        let class = s % classes;
        let spec = &cfg.classes[class];
        let mut srng = stream(cfg.seed, &format!("subject/{subject_id}"));
        let updrs_raw = raw_score(class, &mut srng);
        let amplitude = draw(spec.amplitude, &mut srng);
        let frequency = draw(spec.frequency, &mut srng);
        let decay = draw(spec.decay, &mut srng);
        for c in 0..cfg.clips_per_subject {
            let clip_id = format!("{subject_id}_c{c:02}");
            let mut rng = stream(cfg.seed, &format!("clip/{clip_id}"));
            let n = rng.gen_range(cfg.frame_count[0]..=cfg.frame_count[1]);
            let angle = rng.gen_range(0.0..std::f64::consts::TAU);
            let speed = draw(cfg.camera_pan, &mut rng);
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let [w, h] = cfg.frame_size;
            let scene = Scene {
                background: Texture::random(&mut rng, 2.0 * w as f32, 2.0 * h as f32, 24, 6),
                object: Texture::random(&mut rng, w as f32 / 2.0, h as f32 / 2.0, 12, 3),
                bg_tint: tint(&mut rng),
                obj_tint: tint(&mut rng),
            };
            let object = object_track(cfg.task, cfg, n, (amplitude, frequency, decay, phase), &mut rng);
            let truth = ClipTruth {
                clip_id: clip_id.clone(),
                subject_id: subject_id.clone(),
                task: cfg.task,
                class,
                updrs_raw,
                fps: cfg.fps,
                width: w,
                height: h,
                frame_count: n,
                camera_pan: [speed * angle.cos(), speed * angle.sin()],
                amplitude,
                frequency,
                decay,
                phase,
                object,
            };
            let rel = PathBuf::from("clips").join(&clip_id);
            let dir = out.join(&rel);
            fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            let base_radius = truth.object[0][2];
            for i in 0..n {
                let (frame, mask) = render(&scene, &truth, i, base_radius);
                write_frame(&frame_path(&dir, i), &frame)?;
                write_mask(&mask_path(&dir, i), w, h, &mask)?;
            }
            let json = serde_json::to_string_pretty(&truth).expect("truth serializes");
            let path = dir.join("clip.json");
            fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
            entries.push(ManifestEntry {
                clip_id,
                subject_id: subject_id.clone(),
                task: cfg.task,
                updrs_raw,
                frame_dir: rel,
                frame_count: n,
                fps: cfg.fps,
            });
        }
    }
    let manifest = DatasetManifest {
        root: out.to_path_buf(),
        entries,
    };
    manifest.save(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

pub fn read_truth(frame_dir: &Path) -> Result<ClipTruth> {
    let path = frame_dir.join("clip.json");
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(&path, e.to_string()))
}

/// A textured square translating over a panning textured background.
#[derive(Clone, Debug)]
pub struct PanSquareScene {
    pub frames: [GrayImage; 2],
    /// Square's top-left corner in each frame and its side length.
    pub corners: [(f64, f64); 2],
    pub side: f64,
}

/// Two frames: the background moves by `pan`, the square by `velocity`.
pub fn pan_square_scene(size: usize, side: f64, pan: (f64, f64), velocity: (f64, f64), seed: u64) -> PanSquareScene {
    let mut rng = stream(seed, "pan-square");
    let background = Texture::random(&mut rng, size as f32, size as f32, 24, 6);
    let object = Texture::random(&mut rng, side as f32, side as f32, 12, 3);
    let c0 = ((size as f64 - side) / 2.0, (size as f64 - side) / 2.0);
    let corners = [c0, (c0.0 + velocity.0, c0.1 + velocity.1)];
    let frame = |k: usize| {
        let (ox, oy) = corners[k];
        let (px, py) = (pan.0 * k as f64, pan.1 * k as f64);
        GrayImage::from_fn(size, size, |x, y| {
            let (fx, fy) = (x as f64, y as f64);
            let inside = |v: f64, lo: f64| ((v - lo + 0.5).min(lo + side - v + 0.5)).clamp(0.0, 1.0);
            let a = (inside(fx, ox) * inside(fy, oy)) as f32;
            let bg = 0.2 + 0.6 * background.value((fx - px) as f32, (fy - py) as f32);
            let fg = 0.1 + 0.8 * object.value((fx - ox) as f32, (fy - oy) as f32);
            a * fg + (1.0 - a) * bg
        })
    };
    PanSquareScene {
        frames: [frame(0), frame(1)],
        corners,
        side,
    }
}
