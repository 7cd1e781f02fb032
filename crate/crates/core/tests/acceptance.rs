//! One PASS/FAIL line per acceptance criterion. Run with
//! `cargo test --release --test acceptance -- --nocapture`.

mod common;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use common::*;
use mbnet::data::{generate_synthetic, SynthConfig, MANIFEST_FILE};
use mbnet::flow::{central_window, estimate_flow, FlowField, TvL1Params};
use mbnet::model::{consensus, encode_snippet, init_params, SnippetOutput};
use mbnet::motion::motion_boundary;
use mbnet::pipeline::{log_path, Cache, Pipeline, PipelineConfig, Report, FUSED};
use mbnet::sampling::{dense_snippets, segment_sample, Clip, Modality, SamplerConfig};
use mbnet::tensor::{conv3d, Tensor};
use mbnet::train::{cross_entropy, focal_loss, subject_folds, EpochLog, FocalConfig};
use rand::seq::SliceRandom;
use rand::Rng;

const GRAD_PROBES: usize = 100;
const GRAD_TOL: f64 = 1e-3;
const GRAD_BUDGET: Duration = Duration::from_secs(120);
const CONV_SHAPES: usize = 50;
const CONV_TOL: f64 = 1e-6;
const CONV_BUDGET: Duration = Duration::from_secs(60);
const FLOW_PAIRS: usize = 20;
const FLOW_MAX_SHIFT: f64 = 4.0;
const FLOW_EPE: f32 = 0.5;
const FLOW_INLIERS: f64 = 0.9;
const FLOW_BUDGET: Duration = Duration::from_secs(300);
const MB_RADIUS: f64 = 3.0;
const MB_SHARE: f64 = 0.95;
const MB_ROUNDING: f32 = 1e-5;
const FOCAL_VALUE: f64 = 5.268e-4;
const FOCAL_TOL: f64 = 1e-7;
const DESK_SEEDS: [u64; 3] = [1, 2, 3];
const DESK_TRAIN_F1: f64 = 0.95;
const DESK_BUDGET: Duration = Duration::from_secs(3600);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn gradients() -> Outcome {
    let t = Instant::now();
    let mut worst = (0.0f64, "");
    let mut probes = 0;
    for (i, case) in gradient_cases(7).iter().enumerate() {
        let r = check_gradients(case, GRAD_PROBES, 1000 + i as u64);
        probes += r.probes;
        if r.max_rel > worst.0 {
            worst = (r.max_rel, case.name);
        }
    }
    let took = t.elapsed();
    outcome(
        worst.0 <= GRAD_TOL && took < GRAD_BUDGET,
        format!("{probes} probes, worst relative error {:.2e} ({}), {:.1?}", worst.0, worst.1, took),
    )
}

fn conv_oracle() -> Outcome {
    let t = Instant::now();
    let mut r = rng(11);
    let mut worst = 0.0f64;
    for _ in 0..CONV_SHAPES {
        let ci = r.gen_range(1..=3);
        let k: [usize; 3] = [r.gen_range(1..=3), r.gen_range(1..=3), r.gen_range(1..=3)];
        let input = [ci, r.gen_range(k[0]..=k[0] + 5), r.gen_range(k[1]..=k[1] + 5), r.gen_range(k[2]..=k[2] + 5)];
        let kernel = [r.gen_range(1..=4), ci, k[0], k[1], k[2]];
        let stride = [r.gen_range(1..=2), r.gen_range(1..=2), r.gen_range(1..=2)];
        let padding = [r.gen_range(0..=k[0] / 2 + 1), r.gen_range(0..=k[1] / 2 + 1), r.gen_range(0..=k[2] / 2 + 1)];
        let x = random_tensor(&mut r, &input, -1.0, 1.0);
        let w = random_tensor(&mut r, &kernel, -1.0, 1.0);
        let want = naive_conv3d(&x, &w, stride, padding);
        let got = conv3d(&x, &w, stride, padding).unwrap();
        assert_eq!(got.shape(), want.shape());
        for (g, o) in got.data().iter().zip(want.data()) {
            worst = worst.max((g - o).abs() / o.abs().max(1e-12));
        }
    }
    let took = t.elapsed();
    outcome(
        worst <= CONV_TOL && took < CONV_BUDGET,
        format!("{CONV_SHAPES} shapes, worst relative error {worst:.2e}, {took:.1?}"),
    )
}

fn flow_recovery() -> Outcome {
    let t = Instant::now();
    let mut r = rng(21);
    let mut worst = (f64::INFINITY, (0.0, 0.0));
    let size = 64;
    for i in 0..FLOW_PAIRS {
        let (dx, dy) = loop {
            let d = (r.gen_range(-FLOW_MAX_SHIFT..FLOW_MAX_SHIFT), r.gen_range(-FLOW_MAX_SHIFT..FLOW_MAX_SHIFT));
            if d.0 * d.0 + d.1 * d.1 <= FLOW_MAX_SHIFT * FLOW_MAX_SHIFT {
                break d;
            }
        };
        let (a, b) = translated_pair(size, 100 + i as u64, dx as f32, dy as f32);
        let f = estimate_flow(&a, &b, &TvL1Params::default()).unwrap();
        let (lo, hi) = central_window(size, 0.8);
        let (mut good, mut n) = (0, 0);
        for y in lo..hi {
            for x in lo..hi {
                let (u, v) = f.at(x, y);
                let epe = ((u as f64 - dx).powi(2) + (v as f64 - dy).powi(2)).sqrt();
                good += (epe <= FLOW_EPE as f64) as usize;
                n += 1;
            }
        }
        let frac = good as f64 / n as f64;
        if frac < worst.0 {
            worst = (frac, (dx, dy));
        }
    }
    let took = t.elapsed();
    outcome(
        worst.0 >= FLOW_INLIERS && took < FLOW_BUDGET,
        format!(
            "{FLOW_PAIRS} translations, worst inlier share {:.3} at ({:.2}, {:.2}), {took:.1?}",
            worst.0, worst.1 .0, worst.1 .1
        ),
    )
}

fn camera_suppression() -> Outcome {
    let mut r = rng(31);
    let mut exact = true;
    let mut rounding = 0.0f32;
    for _ in 0..200 {
        let (w, h) = (r.gen_range(3..24), r.gen_range(3..24));
        // Values and offsets on a dyadic grid keep every f32 sum exact.
        let dyadic = FlowField::from_fn(w, h, |_, _| (r.gen_range(-64..=64) as f32 / 8.0, r.gen_range(-64..=64) as f32 / 8.0));
        let (du, dv) = (r.gen_range(-40..=40) as f32 / 4.0, r.gen_range(-40..=40) as f32 / 4.0);
        exact &= motion_boundary(&dyadic).unwrap() == motion_boundary(&constant_offset(&dyadic, du, dv)).unwrap();
        let any = FlowField::from_fn(w, h, |_, _| (r.gen_range(-10.0..10.0), r.gen_range(-10.0..10.0)));
        let (a, b) = (
            motion_boundary(&any).unwrap(),
            motion_boundary(&constant_offset(&any, r.gen_range(-20.0..20.0), r.gen_range(-20.0..20.0))).unwrap(),
        );
        for (x, y) in a.b_u().iter().chain(a.b_v()).zip(b.b_u().iter().chain(b.b_v())) {
            rounding = rounding.max((x - y).abs());
        }
    }
    let size = 64;
    let shares: Vec<f64> = (0..6)
        .map(|seed| {
            let scene = mbnet::data::synth::pan_square_scene(size, 20.0, (2.0, 1.0), (-1.0, 0.5), seed);
            let flow = estimate_flow(&scene.frames[0], &scene.frames[1], &TvL1Params::default()).unwrap();
            energy_near_outline(&scene, &motion_boundary(&flow).unwrap().energy(), size, MB_RADIUS)
        })
        .collect();
    let min_share = shares.iter().cloned().fold(1.0, f64::min);
    outcome(
        exact && rounding <= MB_ROUNDING && min_share >= MB_SHARE,
        format!(
            "offset exact on dyadic fields: {exact}, max rounding on arbitrary fields {rounding:.1e}; \
             energy within {MB_RADIUS} px of the object: min {min_share:.4} over 6 scenes"
        ),
    )
}

fn focal() -> Outcome {
    let mut r = rng(41);
    let mut equal = true;
    for _ in 0..1000 {
        let m = r.gen_range(2..=5);
        let mut p: Vec<f64> = (0..m).map(|_| r.gen_range(1e-6..1.0)).collect();
        let s: f64 = p.iter().sum();
        p.iter_mut().for_each(|v| *v /= s);
        let y = r.gen_range(0..m);
        let fl = focal_loss(&p, y, &FocalConfig { alpha: 1.0, gamma: 0.0 }).unwrap();
        equal &= fl == cross_entropy(&p, y).unwrap() && fl == -p[y].ln();
    }
    let mut monotone = true;
    for _ in 0..1000 {
        let p: f64 = r.gen_range(1e-6..1.0 - 1e-6);
        let losses: Vec<f64> = [0.0, 0.5, 1.0, 2.0, 3.0, 5.0]
            .iter()
            .map(|&gamma| focal_loss(&[p], 0, &FocalConfig { alpha: 0.5, gamma }).unwrap())
            .collect();
        monotone &= losses.windows(2).all(|w| w[1] < w[0]);
    }
    let value = focal_loss(&[0.9, 0.1], 0, &FocalConfig { alpha: 0.5, gamma: 2.0 }).unwrap();
    outcome(
        equal && monotone && (value - FOCAL_VALUE).abs() <= FOCAL_TOL,
        format!("cross-entropy equality {equal}, monotone in gamma {monotone}, value {value:.4e}"),
    )
}

fn frame_index_clip(n: usize) -> Clip {
    let (h, w) = (2, 2);
    Clip::new("c", "s", Modality::MotionBoundaries, Tensor::from_fn(&[2, n, h, w], |i| ((i / (h * w)) % n) as f32)).unwrap()
}

fn first_pixel_frames(frames: &Tensor<f32>) -> Vec<usize> {
    let (l, plane) = (frames.shape()[1], frames.shape()[2] * frames.shape()[3]);
    (0..l).map(|j| frames.data()[j * plane] as usize).collect()
}

fn sampling_contract() -> Outcome {
    let c = SamplerConfig::default();
    let mut r = rng(51);
    let mut lengths: Vec<usize> = (123..=400).collect();
    lengths.extend((0..200).map(|_| r.gen_range(128..5000)));
    let mut bad = Vec::new();
    for &n in &lengths {
        let clip = frame_index_clip(n);
        for _ in 0..5 {
            let s = segment_sample(&clip, &c, &mut r).unwrap();
            let ok = s.len() == 4
                && s.windows(2).all(|p| p[0].start < p[1].start)
                && s.iter().all(|s| {
                    let idx = first_pixel_frames(&s.frames);
                    idx.len() == 32 && idx.windows(2).all(|w| w[1] == w[0] + 1 || (w[0] == n - 1 && w[1] == 0))
                });
            if !ok {
                bad.push(format!("segment n={n}"));
            }
        }
        let d = dense_snippets(&clip, &c).unwrap();
        let ok = d.len() == 64
            && d.iter().all(|s| {
                let idx = first_pixel_frames(&s.frames);
                idx.len() == 16 && idx == (s.start..s.start + 16).collect::<Vec<_>>() && s.start + 16 <= n
            });
        if !ok {
            bad.push(format!("dense n={n}"));
        }
    }
    outcome(
        bad.is_empty(),
        format!("{} clip lengths from 123 frames up, failures: {bad:?}", lengths.len()),
    )
}

fn consensus_attention() -> Outcome {
    let mut r = rng(61);
    let mut plain_mean = true;
    let mut symmetric = true;
    for _ in 0..1000 {
        let k = r.gen_range(1..=8);
        let mut outs: Vec<SnippetOutput> = (0..k)
            .map(|_| SnippetOutput {
                features: vec![],
                class_scores: (0..3).map(|_| r.gen_range(-10.0..10.0)).collect(),
                attention: r.gen_range(0.0..1.0),
            })
            .collect();
        let got = consensus(&outs, false).unwrap();
        for c in 0..3 {
            let mut sum = 0.0f64;
            for o in &outs {
                sum += o.class_scores[c] as f64;
            }
            plain_mean &= got[c] == sum / k as f64;
        }
        for attention in [true, false] {
            let a = consensus(&outs, attention).unwrap();
            outs.shuffle(&mut r);
            let b = consensus(&outs, attention).unwrap();
            symmetric &= a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= 1e-12 * x.abs().max(1.0));
        }
    }
    let config = small_encoder(true);
    let (mut lo, mut hi) = (f32::INFINITY, f32::NEG_INFINITY);
    let mut params = init_params(&config, Modality::MotionBoundaries, &mut r).unwrap();
    for i in 0..10_000 {
        if i % 500 == 0 {
            params = init_params(&config, Modality::MotionBoundaries, &mut r).unwrap();
            let gain = [1.0f32, 10.0, 100.0][(i / 500) % 3];
            for name in ["att2.weight", "att2.bias"] {
                let t = params.get(name).unwrap().map(|v| v * gain);
                params.set(name, t).unwrap();
            }
        }
        let scale = [1e-3, 1.0, 1e3][i % 3];
        let x = random_tensor(&mut r, &[2, 4, 6, 6], -scale, scale).cast::<f32>();
        let l = encode_snippet(&config, &params, Modality::MotionBoundaries, &x).unwrap().attention;
        lo = lo.min(l);
        hi = hi.max(l);
    }
    outcome(
        plain_mean && symmetric && lo >= 0.0 && hi <= 1.0,
        format!("plain mean exact {plain_mean}, permutation symmetric {symmetric}, lambda range [{lo:.4}, {hi:.4}] over 10^4 inputs"),
    )
}

fn fold_integrity() -> Outcome {
    let subjects: Vec<String> = (0..25).map(|i| format!("s{i:03}")).collect();
    let (mut leaks, mut bad_sizes) = (0, 0);
    for seed in 0..100 {
        let plan = subject_folds(&subjects, 5, &mut rng(seed)).unwrap();
        for f in 0..5 {
            let (val, train) = (plan.validation_subjects(f), plan.training_subjects(f));
            leaks += val.intersection(&train).count();
            bad_sizes += (val.len() != 5) as usize;
        }
        let covered: usize = (0..5).map(|f| plan.validation_subjects(f).len()).sum();
        bad_sizes += (covered != 25) as usize;
    }
    outcome(leaks == 0 && bad_sizes == 0, format!("100 plans: {leaks} leaked subjects, {bad_sizes} bad folds"))
}

/// Settings shared by every desk-scale run; one held-out fold per seed.
fn desk_config(manifest: &Path, output: &Path, seed: u64) -> PipelineConfig {
    let mut c = PipelineConfig {
        seed,
        manifest: manifest.to_path_buf(),
        output: output.to_path_buf(),
        ..Default::default()
    };
    c.sampler.train_len = 8;
    c.sampler.test_snippets = 16;
    c.sampler.test_len = 8;
    c.train.optimizer.learning_rate = 1e-3;
    c.folds.run = vec![0];
    c
}

struct DeskSeed {
    mb: f64,
    rgb: f64,
    mb_no_attention: f64,
    best_train_f1: f64,
}

fn desk_seed(seed: u64, root: &Path) -> DeskSeed {
    let data = root.join(format!("data{seed}"));
    generate_synthetic(&SynthConfig { seed, ..Default::default() }, &data).unwrap();
    let manifest = data.join(MANIFEST_FILE);
    let cache = root.join(format!("cache{seed}"));

    let mut on = desk_config(&manifest, &root.join(format!("on{seed}")), seed);
    on.modalities = vec![Modality::MotionBoundaries, Modality::Rgb];
    let report = Pipeline::open(on.clone(), Cache::new(&cache)).unwrap().run().unwrap().report;
    let logs: Vec<EpochLog> = serde_json::from_str(
        &fs::read_to_string(log_path(&on.output.join("models"), Modality::MotionBoundaries, 0)).unwrap(),
    )
    .unwrap();
    let best_train_f1 = logs
        .iter()
        .filter_map(|l| l.checkpoint.as_ref())
        .map(|c| c.train_f1)
        .fold(0.0, f64::max);

    let mut off = desk_config(&manifest, &root.join(format!("off{seed}")), seed);
    off.model.attention = false;
    let ablated = Pipeline::open(off, Cache::new(&cache)).unwrap().run().unwrap().report;
    let f1 = |r: &Report, name: &str| r.stream(name).unwrap().mean_f1;
    DeskSeed {
        mb: f1(&report, "mb"),
        rgb: f1(&report, "rgb"),
        mb_no_attention: f1(&ablated, "mb"),
        best_train_f1,
    }
}

fn desk_learning() -> Outcome {
    let t = Instant::now();
    let root = tempfile::tempdir().unwrap();
    let runs: Vec<DeskSeed> = DESK_SEEDS.iter().map(|&s| desk_seed(s, root.path())).collect();
    let mean = |f: fn(&DeskSeed) -> f64| runs.iter().map(f).sum::<f64>() / runs.len() as f64;
    let (mb, rgb, off) = (mean(|r| r.mb), mean(|r| r.rgb), mean(|r| r.mb_no_attention));
    let fits = runs.iter().all(|r| r.best_train_f1 >= DESK_TRAIN_F1);
    let took = t.elapsed();
    let per_seed: Vec<String> = runs
        .iter()
        .zip(DESK_SEEDS)
        .map(|(r, s)| {
            format!(
                "seed {s}: train {:.3}, mb {:.3}, rgb {:.3}, mb without attention {:.3}",
                r.best_train_f1, r.mb, r.rgb, r.mb_no_attention
            )
        })
        .collect();
    let verdict = |ok: bool| if ok { "ok" } else { "FAIL" };
    outcome(
        fits && mb > rgb && mb >= off && took <= DESK_BUDGET,
        format!(
            "(a) training fit {}; (b) mb {mb:.3} vs rgb {rgb:.3} {}; (c) attention on {mb:.3} vs off {off:.3} {}; {took:.0?}\n    {}",
            verdict(fits),
            verdict(mb > rgb),
            verdict(mb >= off),
            per_seed.join("\n    ")
        ),
    )
}

fn determinism() -> Outcome {
    let root = tempfile::tempdir().unwrap();
    let manifest = synth_dataset(&root.path().join("data"), 10, 2, 5);
    let mut reports = Vec::new();
    for i in 0..2 {
        let mut c = quick_config(&manifest, &root.path().join(format!("out{i}")), 3);
        c.modalities = vec![Modality::MotionBoundaries, Modality::Rgb];
        // Separate cache roots so the second run recomputes everything.
        Pipeline::open(c.clone(), Cache::new(root.path().join(format!("cache{i}")))).unwrap().run().unwrap();
        reports.push(fs::read(c.output.join(mbnet::pipeline::REPORT_FILE)).unwrap());
    }
    let text = String::from_utf8_lossy(&reports[0]);
    outcome(
        reports[0] == reports[1] && text.contains(FUSED),
        format!("two cold runs, {} report bytes each, identical: {}", reports[0].len(), reports[0] == reports[1]),
    )
}

#[test]
fn acceptance() {
    let checks: [(&str, fn() -> Outcome); 10] = [
        ("gradient correctness", gradients),
        ("conv3d oracle", conv_oracle),
        ("flow recovery", flow_recovery),
        ("camera-motion suppression", camera_suppression),
        ("focal loss", focal),
        ("sampling contract", sampling_contract),
        ("consensus and attention", consensus_attention),
        ("fold integrity", fold_integrity),
        ("desk-scale learning", desk_learning),
        ("determinism", determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in checks.iter().enumerate() {
        let o = check();
        println!("{} criterion {:>2} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
        if !o.pass {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
