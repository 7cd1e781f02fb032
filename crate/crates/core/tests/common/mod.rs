#![allow(dead_code)]

use std::path::{Path, PathBuf};

use mbnet::data::synth::PanSquareScene;
use mbnet::data::{generate_synthetic, SynthConfig, MANIFEST_FILE};
use mbnet::data::texture::Texture;
use mbnet::flow::{GrayImage, FlowField};
use mbnet::pipeline::config::PipelineConfig;
use mbnet::model::{clip_loss_on_tape, init_params, EncoderConfig, StageConfig};
use mbnet::sampling::Modality;
use mbnet::tensor::{NodeId, ParamSet, Tape, Tensor};
use mbnet::train::FocalConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(lo..hi))
}

/// Frame pair whose second frame is the first shifted by `d`, with
/// periodic wrap so the true flow is `d` everywhere.
pub fn translated_pair(size: usize, seed: u64, dx: f32, dy: f32) -> (GrayImage, GrayImage) {
    let mut r = rng(seed);
    let tex = Texture::random(&mut r, size as f32, size as f32, 24, 6);
    let a = GrayImage::from_fn(size, size, |x, y| tex.value(x as f32, y as f32));
    let b = GrayImage::from_fn(size, size, |x, y| tex.value(x as f32 - dx, y as f32 - dy));
    (a, b)
}

/// Direct nested-loop cross-correlation with zero padding.
pub fn naive_conv3d(
    input: &Tensor<f64>,
    kernel: &Tensor<f64>,
    stride: [usize; 3],
    padding: [usize; 3],
) -> Tensor<f64> {
    let [ci, t, h, w]: [usize; 4] = input.shape().try_into().unwrap();
    let [co, _, kt, kh, kw]: [usize; 5] = kernel.shape().try_into().unwrap();
    let out_dim = |n: usize, k: usize, s: usize, p: usize| (n + 2 * p - k) / s + 1;
    let (ot, oh, ow) = (
        out_dim(t, kt, stride[0], padding[0]),
        out_dim(h, kh, stride[1], padding[1]),
        out_dim(w, kw, stride[2], padding[2]),
    );
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![0.0; co * ot * oh * ow];
    for o in 0..co {
        for zt in 0..ot {
            for zy in 0..oh {
                for zx in 0..ow {
                    let mut acc = 0.0;
                    for c in 0..ci {
                        for dt in 0..kt {
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    let it = (zt * stride[0] + dt) as isize - padding[0] as isize;
                                    let iy = (zy * stride[1] + dy) as isize - padding[1] as isize;
                                    let ix = (zx * stride[2] + dx) as isize - padding[2] as isize;
                                    if it < 0 || iy < 0 || ix < 0 || it >= t as isize || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    let xv = x[((c * t + it as usize) * h + iy as usize) * w + ix as usize];
                                    let kv = k[(((o * ci + c) * kt + dt) * kh + dy) * kw + dx];
                                    acc += xv * kv;
                                }
                            }
                        }
                    }
                    out[((o * ot + zt) * oh + zy) * ow + zx] = acc;
                }
            }
        }
    }
    Tensor::new(vec![co, ot, oh, ow], out).unwrap()
}

/// Records a scalar loss from the current parameter values.
pub type Build = Box<dyn Fn(&mut Tape<f64>, &ParamSet<f64>) -> NodeId>;

pub struct GradCase {
    pub name: &'static str,
    pub params: ParamSet<f64>,
    pub build: Build,
}

#[derive(Debug, Clone, Copy)]
pub struct GradResult {
    pub probes: usize,
    pub max_rel: f64,
}

pub const FD_STEP: f64 = 1e-6;
/// Gradients smaller than this are compared absolutely.
pub const GRAD_FLOOR: f64 = 1e-6;

fn loss_at(case: &GradCase, params: &ParamSet<f64>) -> f64 {
    let mut tape = Tape::new();
    let loss = (case.build)(&mut tape, params);
    tape.value(loss).data()[0]
}

/// Central differences at `probes` random parameter entries against the
/// tape's gradient.
pub fn check_gradients(case: &GradCase, probes: usize, seed: u64) -> GradResult {
    let mut params = case.params.clone();
    params.ensure_grads();
    let mut tape = Tape::new();
    let loss = (case.build)(&mut tape, &params);
    tape.backward(loss, &mut params).unwrap();

    let sizes: Vec<(String, usize)> = params.iter().map(|p| (p.name().to_string(), p.value().numel())).collect();
    let total: usize = sizes.iter().map(|s| s.1).sum();
    let mut r = rng(seed);
    let mut max_rel = 0.0f64;
    for _ in 0..probes {
        let mut flat = r.gen_range(0..total);
        let (name, index) = sizes
            .iter()
            .find_map(|(n, len)| {
                if flat < *len {
                    Some((n.clone(), flat))
                } else {
                    flat -= len;
                    None
                }
            })
            .unwrap();
        let analytic = params.grad(&name).unwrap()[index];
        let shifted = |delta: f64| {
            let mut p = case.params.clone();
            let mut data = p.get(&name).unwrap().data().to_vec();
            data[index] += delta;
            let shape = p.get(&name).unwrap().shape().to_vec();
            p.set(&name, Tensor::new(shape, data).unwrap()).unwrap();
            loss_at(case, &p)
        };
        let numeric = (shifted(FD_STEP) - shifted(-FD_STEP)) / (2.0 * FD_STEP);
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
        max_rel = max_rel.max(rel);
    }
    GradResult { probes, max_rel }
}

/// Reduces any rank-1 or rank-4 node to a scalar through fixed random
/// weights, so every output element influences the loss differently.
fn project(tape: &mut Tape<f64>, node: NodeId, weights: &Tensor<f64>) -> NodeId {
    let out = match tape.value(node).rank() {
        1 => {
            let w = tape.input(weights.clone());
            let b = tape.input(Tensor::zeros(&[1]));
            tape.linear(node, w, b).unwrap()
        }
        4 => {
            let w = tape.input(weights.clone());
            tape.conv3d(node, w, [1, 1, 1], [0, 0, 0]).unwrap()
        }
        r => panic!("cannot project rank {r}"),
    };
    tape.sum(out)
}

fn projection_for(shape: &[usize], r: &mut impl Rng) -> Tensor<f64> {
    match shape.len() {
        1 => random_tensor(r, &[1, shape[0]], -1.0, 1.0),
        4 => {
            let mut s = vec![1];
            s.extend_from_slice(shape);
            random_tensor(r, &s, -1.0, 1.0)
        }
        n => panic!("cannot project rank {n}"),
    }
}

fn params(entries: Vec<(&str, Tensor<f64>)>) -> ParamSet<f64> {
    let mut p = ParamSet::new();
    for (n, t) in entries {
        p.insert(n, t).unwrap();
    }
    p
}

/// Values bounded away from zero so ReLU kinks are never straddled.
fn away_from_zero(r: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = r.gen_range(0.05..1.0);
        if r.gen_bool(0.5) {
            v
        } else {
            -v
        }
    })
}

fn unary(name: &'static str, shape: &[usize], r: &mut impl Rng, op: fn(&mut Tape<f64>, NodeId) -> NodeId) -> GradCase {
    let x = away_from_zero(r, shape);
    let out_shape = {
        let mut t = Tape::new();
        let n = t.input(x.clone());
        let y = op(&mut t, n);
        t.value(y).shape().to_vec()
    };
    let w = projection_for(&out_shape, r);
    GradCase {
        name,
        params: params(vec![("x", x)]),
        build: Box::new(move |t, p| {
            let x = t.param(p, "x").unwrap();
            let y = op(t, x);
            project(t, y, &w)
        }),
    }
}

pub fn small_encoder(attention: bool) -> EncoderConfig {
    EncoderConfig {
        stages: vec![
            StageConfig {
                channels: 3,
                kernel: [3, 3, 3],
                stride: [1, 2, 2],
            },
            StageConfig {
                channels: 4,
                kernel: [3, 3, 3],
                stride: [2, 1, 1],
            },
        ],
        num_classes: 3,
        attention_hidden: Some(3),
        attention,
        dropout: 0.5,
    }
}

fn end_to_end(name: &'static str, attention: bool, seed: u64) -> GradCase {
    let config = small_encoder(attention);
    let modality = Modality::MotionBoundaries;
    let p: ParamSet<f64> = init_params(&config, modality, &mut rng(seed)).unwrap().cast();
    let mut r = rng(seed + 1);
    let snippets: Vec<Tensor<f64>> = (0..3).map(|_| random_tensor(&mut r, &[2, 4, 6, 6], -1.0, 1.0)).collect();
    GradCase {
        name,
        params: p,
        build: Box::new(move |t, p| {
            let mut dropout = rng(seed + 2);
            let focal = FocalConfig::default();
            let (_, loss) =
                clip_loss_on_tape(t, p, &config, modality, snippets.clone(), 2, &focal, Some(&mut dropout)).unwrap();
            loss
        }),
    }
}

/// One case per differentiable tape operation, plus the full clip loss
/// with and without attention.
pub fn gradient_cases(seed: u64) -> Vec<GradCase> {
    let mut r = rng(seed);
    let mut cases = Vec::new();

    for (name, xs, ks, stride, pad) in [
        ("conv3d", [2, 5, 6, 6], [3, 2, 3, 3, 3], [1, 2, 2], [1, 1, 1]),
        ("conv3d strided", [3, 6, 5, 4], [2, 3, 2, 3, 1], [2, 1, 2], [0, 1, 0]),
    ] {
        let x = random_tensor(&mut r, &xs, -1.0, 1.0);
        let k = random_tensor(&mut r, &ks, -1.0, 1.0);
        let out = naive_conv3d(&x, &k, stride, pad);
        let w = projection_for(out.shape(), &mut r);
        cases.push(GradCase {
            name,
            params: params(vec![("x", x), ("k", k)]),
            build: Box::new(move |t, p| {
                let (x, k) = (t.param(p, "x").unwrap(), t.param(p, "k").unwrap());
                let y = t.conv3d(x, k, stride, pad).unwrap();
                project(t, y, &w)
            }),
        });
    }

    let x = random_tensor(&mut r, &[3, 2, 3, 3], -1.0, 1.0);
    let b = random_tensor(&mut r, &[3], -1.0, 1.0);
    let w = projection_for(&[3, 2, 3, 3], &mut r);
    cases.push(GradCase {
        name: "add_channel_bias",
        params: params(vec![("x", x), ("b", b)]),
        build: Box::new(move |t, p| {
            let (x, b) = (t.param(p, "x").unwrap(), t.param(p, "b").unwrap());
            let y = t.add_channel_bias(x, b).unwrap();
            project(t, y, &w)
        }),
    });

    cases.push(unary("relu", &[2, 3, 4, 4], &mut r, |t, x| t.relu(x)));
    cases.push(unary("sigmoid", &[2, 2, 3, 3], &mut r, |t, x| t.sigmoid(x)));
    cases.push(unary("global_avg_pool", &[4, 2, 3, 3], &mut r, |t, x| t.global_avg_pool(x)));
    cases.push(unary("scale", &[2, 2, 3, 3], &mut r, |t, x| t.scale(x, 0.37)));
    cases.push(unary("softmax", &[5], &mut r, |t, x| t.softmax(x).unwrap()));
    cases.push(unary("dropout", &[2, 3, 3, 3], &mut r, |t, x| {
        t.dropout(x, 0.7, &mut rng(99)).unwrap()
    }));
    cases.push(GradCase {
        name: "sum",
        params: params(vec![("x", random_tensor(&mut r, &[2, 3, 3, 3], -1.0, 1.0))]),
        build: Box::new(|t, p| {
            let x = t.param(p, "x").unwrap();
            t.sum(x)
        }),
    });

    let (x, wt, bt) = (
        random_tensor(&mut r, &[6], -1.0, 1.0),
        random_tensor(&mut r, &[4, 6], -1.0, 1.0),
        random_tensor(&mut r, &[4], -1.0, 1.0),
    );
    let w = projection_for(&[4], &mut r);
    cases.push(GradCase {
        name: "linear",
        params: params(vec![("x", x), ("w", wt), ("b", bt)]),
        build: Box::new(move |t, p| {
            let (x, wt, bt) = (t.param(p, "x").unwrap(), t.param(p, "w").unwrap(), t.param(p, "b").unwrap());
            let y = t.linear(x, wt, bt).unwrap();
            project(t, y, &w)
        }),
    });

    let (x, s) = (
        random_tensor(&mut r, &[2, 2, 2, 2], -1.0, 1.0),
        random_tensor(&mut r, &[1], 0.2, 1.0),
    );
    let w = projection_for(&[2, 2, 2, 2], &mut r);
    cases.push(GradCase {
        name: "mul_scalar",
        params: params(vec![("x", x), ("s", s)]),
        build: Box::new(move |t, p| {
            let (x, s) = (t.param(p, "x").unwrap(), t.param(p, "s").unwrap());
            let y = t.mul_scalar(x, s).unwrap();
            project(t, y, &w)
        }),
    });

    let (a, b) = (
        random_tensor(&mut r, &[2, 2, 3, 3], -1.0, 1.0),
        random_tensor(&mut r, &[2, 2, 3, 3], -1.0, 1.0),
    );
    let w = projection_for(&[2, 2, 3, 3], &mut r);
    cases.push(GradCase {
        name: "add",
        params: params(vec![("a", a), ("b", b)]),
        build: Box::new(move |t, p| {
            let (a, b) = (t.param(p, "a").unwrap(), t.param(p, "b").unwrap());
            let y = t.add(a, b).unwrap();
            project(t, y, &w)
        }),
    });

    let probs = random_tensor(&mut r, &[3], 0.05, 0.95);
    cases.push(GradCase {
        name: "focal_loss",
        params: params(vec![("p", probs)]),
        build: Box::new(|t, p| {
            let p = t.param(p, "p").unwrap();
            t.focal_loss(p, 1, 0.5, 2.0).unwrap()
        }),
    });

    cases.push(end_to_end("clip loss, attention", true, seed + 10));
    cases.push(end_to_end("clip loss, no attention", false, seed + 20));
    cases
}

/// Distance from `(x, y)` to the outline of the axis-aligned square with
/// top-left corner `c` and side `side`.
fn outline_distance(x: f64, y: f64, c: (f64, f64), side: f64) -> f64 {
    let dx = (c.0 - x).max(x - (c.0 + side)).max(0.0);
    let dy = (c.1 - y).max(y - (c.1 + side)).max(0.0);
    let outside = (dx * dx + dy * dy).sqrt();
    if outside > 0.0 {
        outside
    } else {
        (x - c.0).min(c.0 + side - x).min(y - c.1).min(c.1 + side - y)
    }
}

/// Pixels closer than this to the frame edge are excluded: background
/// leaving or entering the frame has no correspondence there.
pub fn edge_margin(size: usize) -> usize {
    size / 8
}

/// Share of motion-boundary energy within `radius` px of the square's
/// outline in either frame, over pixels at least `edge_margin` from the
/// frame edge.
pub fn energy_near_outline(scene: &PanSquareScene, energy: &[f32], size: usize, radius: f64) -> f64 {
    let m = edge_margin(size);
    let (mut near, mut total) = (0.0, 0.0);
    for y in m..size - m {
        for x in m..size - m {
            let (fx, fy) = (x as f64, y as f64);
            let d = scene
                .corners
                .iter()
                .map(|&c| outline_distance(fx, fy, c, scene.side))
                .fold(f64::INFINITY, f64::min);
            let e = energy[y * size + x] as f64;
            total += e;
            if d <= radius {
                near += e;
            }
        }
    }
    near / total
}

pub fn constant_offset(flow: &FlowField, du: f32, dv: f32) -> FlowField {
    FlowField::new(
        flow.width(),
        flow.height(),
        flow.u().iter().map(|u| u + du).collect(),
        flow.v().iter().map(|v| v + dv).collect(),
    )
    .unwrap()
}

/// Renders a default synthetic hand set and returns its manifest path.
pub fn synth_dataset(dir: &Path, subjects: usize, clips: usize, seed: u64) -> PathBuf {
    let cfg = SynthConfig {
        n_subjects: subjects,
        clips_per_subject: clips,
        seed,
        ..Default::default()
    };
    generate_synthetic(&cfg, dir).unwrap();
    dir.join(MANIFEST_FILE)
}

/// Small sampler and short training so pipeline tests stay fast.
pub fn quick_config(manifest: &Path, output: &Path, epochs: usize) -> PipelineConfig {
    let mut c = PipelineConfig {
        manifest: manifest.to_path_buf(),
        output: output.to_path_buf(),
        ..Default::default()
    };
    c.sampler.train_len = 8;
    c.sampler.test_snippets = 4;
    c.sampler.test_len = 8;
    c.train.epochs = epochs;
    c.train.eval_every = epochs;
    c.train.optimizer.learning_rate = 1e-3;
    c
}
