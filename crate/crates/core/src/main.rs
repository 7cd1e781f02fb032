use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use mbnet::data::{generate_synthetic, SynthConfig, Task, ValidationReport, MANIFEST_FILE};
use mbnet::data::{ingest::validate_manifest, DatasetManifest};
use mbnet::flow::TvL1Params;
use mbnet::pipeline::{
    build_report, extract_clip_flow, extract_clip_mb, load_fold_models, log_path, model_path, Cache, Pipeline,
    PipelineConfig, FOLDS_FILE, REPORT_FILE,
};
use mbnet::rng::stream;
use mbnet::sampling::{dense_starts, random_transform, segment_starts, Modality, Transform};
use mbnet::train::FoldPlan;

#[derive(Parser)]
#[command(name = "mbnet", version, about = "Motion-boundary video severity scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic dataset and its manifest.
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// TOML file with generator settings; flags below override it.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        task: Option<Task>,
        #[arg(long)]
        subjects: Option<usize>,
        #[arg(long)]
        clips_per_subject: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validate a manifest against the frames on disk.
    Ingest { manifest: PathBuf },
    /// Write per-clip TV-L1 flow as .flo files under `<out>/<clip_id>/`.
    ExtractFlow {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        task: Option<Task>,
        /// Solver override such as `lambda=0.1`; repeatable.
        #[arg(long = "param", value_name = "KEY=VALUE")]
        params: Vec<String>,
    },
    /// Turn each `<flow>/<clip_id>/` into motion boundaries under `<out>/<clip_id>/`.
    ExtractMb {
        #[arg(long)]
        flow: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the snippets the sampler would draw, one per line.
    Sample {
        #[arg(long)]
        mode: SampleMode,
        #[arg(long)]
        config: PathBuf,
        /// Training epoch whose draws to show.
        #[arg(long, default_value_t = 1)]
        epoch: usize,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one modality on one fold.
    Train {
        #[arg(long)]
        task: Task,
        #[arg(long)]
        modality: Modality,
        #[arg(long)]
        fold: usize,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate trained fold models, fusing the listed modalities.
    Evaluate {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        models: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        fuse: Vec<Modality>,
        #[arg(long)]
        config: PathBuf,
        /// Report destination; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Full pipeline: extraction, training on every fold, fused report.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SampleMode {
    Train,
    Test,
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<PipelineConfig> {
    let mut config = PipelineConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn open(config: PipelineConfig) -> Result<Pipeline> {
    let cache = Cache::from_env(config.output.join("cache"));
    Ok(Pipeline::open(config, cache)?)
}

fn print_cache_stats(pipeline: &Pipeline) {
    for (stage, s) in pipeline.cache_stats() {
        eprintln!("{stage}: {} cached, {} computed", s.hits, s.misses);
    }
}

fn print_issues(report: &ValidationReport) {
    for issue in &report.issues {
        eprintln!("  {issue}");
    }
}

fn synth(
    out: &Path,
    config: Option<&Path>,
    task: Option<Task>,
    subjects: Option<usize>,
    clips: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = match config {
        Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => SynthConfig::default(),
    };
    cfg.task = task.unwrap_or(cfg.task);
    cfg.n_subjects = subjects.unwrap_or(cfg.n_subjects);
    cfg.clips_per_subject = clips.unwrap_or(cfg.clips_per_subject);
    cfg.seed = seed.unwrap_or(cfg.seed);
    let manifest = generate_synthetic(&cfg, out)?;
    println!("{} clips written to {}", manifest.entries.len(), out.join(MANIFEST_FILE).display());
    Ok(())
}

fn extract_flow(manifest_path: &Path, out: &Path, task: Option<Task>, overrides: &[String]) -> Result<()> {
    let mut params = TvL1Params::default();
    for o in overrides {
        let (k, v) = o.split_once('=').with_context(|| format!("`{o}` is not KEY=VALUE"))?;
        params.set(k.trim(), v.trim())?;
    }
    params.validate()?;
    let manifest = mbnet::data::ingest(manifest_path)?;
    let entries: Vec<_> = manifest.entries.iter().filter(|e| task.map_or(true, |t| e.task == t)).collect();
    for e in &entries {
        let dir = out.join(&e.clip_id);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        extract_clip_flow(&manifest, e, &params, &dir).with_context(|| format!("extract-flow failed on `{}`", e.clip_id))?;
    }
    println!("flow for {} clips written to {}", entries.len(), out.display());
    Ok(())
}

fn extract_mb(flow: &Path, out: &Path) -> Result<()> {
    let mut clips: Vec<PathBuf> = fs::read_dir(flow)
        .with_context(|| format!("reading {}", flow.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    clips.sort();
    for dir in &clips {
        let name = dir.file_name().expect("directory entries have names");
        let target = out.join(name);
        fs::create_dir_all(&target).with_context(|| format!("creating {}", target.display()))?;
        extract_clip_mb(dir, &target).with_context(|| format!("extract-mb failed on `{}`", name.to_string_lossy()))?;
    }
    println!("motion boundaries for {} clips written to {}", clips.len(), out.display());
    Ok(())
}

fn sample(config: &Path, mode: SampleMode, epoch: usize, seed: Option<u64>) -> Result<()> {
    let config = load_config(config, seed)?;
    let pipeline = open(config)?;
    let c = &pipeline.config;
    let mut out = io::stdout().lock();
    for entry in pipeline.entries() {
        let mut rng = stream(c.seed, &format!("clip/{epoch}/{}", entry.clip_id));
        for &m in &c.modalities {
            let n = if m == Modality::Rgb { entry.frame_count } else { entry.frame_count - 1 };
            let (starts, len) = match mode {
                SampleMode::Train => (segment_starts(n, &c.sampler, &mut rng)?, c.sampler.train_len),
                SampleMode::Test => (dense_starts(n, &c.sampler)?, c.sampler.test_len),
            };
            for start in starts {
                let t = match mode {
                    SampleMode::Train if c.train.augment.enabled => random_transform(&mut rng, &c.train.augment)?,
                    _ => Transform::identity(),
                };
                writeln!(out, "{}\t{m}\t{start}\t{len}\t{}", entry.clip_id, t.describe())?;
            }
        }
    }
    Ok(())
}

fn train_one(config: &Path, task: Task, modality: Modality, fold: usize, seed: Option<u64>) -> Result<()> {
    let mut config = load_config(config, seed)?;
    config.task = task;
    config.modalities = vec![modality];
    if fold >= config.folds.k {
        bail!("fold {fold} outside 0..{}", config.folds.k);
    }
    let out = config.output.clone();
    let mut pipeline = open(config)?;
    let videos = pipeline.load_videos()?;
    let plan = pipeline.fold_plan()?;
    let (model, logs) = pipeline.train_fold(&videos, &plan, modality, fold)?;
    let models = out.join("models");
    fs::create_dir_all(models.join(modality.name()))?;
    fs::write(out.join(FOLDS_FILE), serde_json::to_string_pretty(&plan)? + "\n")?;
    model.save(&model_path(&models, modality, fold))?;
    fs::write(log_path(&models, modality, fold), serde_json::to_string_pretty(&logs)? + "\n")?;
    print_cache_stats(&pipeline);
    for log in &logs {
        if let Some(c) = &log.checkpoint {
            let held = c.heldout_f1.map_or("-".to_string(), |f| format!("{f:.4}"));
            println!("epoch {:>4}  loss {:.4}  train f1 {:.4}  held-out f1 {held}", log.epoch, log.mean_loss, c.train_f1);
        }
    }
    println!("model written to {}", model_path(&models, modality, fold).display());
    Ok(())
}

fn evaluate(
    config: &Path,
    plan: &Path,
    models: &Path,
    fuse: Vec<Modality>,
    out: Option<&Path>,
    seed: Option<u64>,
) -> Result<()> {
    let mut config = load_config(config, seed)?;
    config.modalities = fuse;
    config.validate()?;
    let plan: FoldPlan = serde_json::from_str(&fs::read_to_string(plan).with_context(|| format!("reading {}", plan.display()))?)
        .with_context(|| format!("parsing {}", plan.display()))?;
    if plan.k != config.folds.k {
        bail!("plan has {} folds, config expects {}", plan.k, config.folds.k);
    }
    let trained = load_fold_models(&config, models)?;
    let mut pipeline = open(config)?;
    let videos = pipeline.load_videos()?;
    let text = build_report(&pipeline.config, &videos, &plan, &trained)?.to_text();
    match out {
        Some(p) => fs::write(p, &text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(config: &Path, seed: Option<u64>) -> Result<()> {
    let config = load_config(config, seed)?;
    let out = config.output.clone();
    let mut pipeline = open(config)?;
    let result = pipeline.run()?;
    print_cache_stats(&pipeline);
    print!("{}", result.text);
    eprintln!("report written to {}", out.join(REPORT_FILE).display());
    Ok(())
}

fn main() -> Result<()> {
    let result = dispatch(Cli::parse().command);
    // A closed pipe (`mbnet sample ... | head`) is not a failure.
    match result {
        Err(e) if e.downcast_ref::<io::Error>().is_some_and(|e| e.kind() == io::ErrorKind::BrokenPipe) => Ok(()),
        other => other,
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Synth {
            out,
            config,
            task,
            subjects,
            clips_per_subject,
            seed,
        } => synth(&out, config.as_deref(), task, subjects, clips_per_subject, seed),
        Command::Ingest { manifest } => {
            let m = DatasetManifest::load(&manifest)?;
            let report = validate_manifest(&m);
            if !report.is_clean() {
                eprintln!("{} problem(s) in {}:", report.issues.len(), manifest.display());
                print_issues(&report);
                bail!("validation failed");
            }
            println!("{} clips OK", m.entries.len());
            Ok(())
        }
        Command::ExtractFlow {
            manifest,
            out,
            task,
            params,
        } => extract_flow(&manifest, &out, task, &params),
        Command::ExtractMb { flow, out } => extract_mb(&flow, &out),
        Command::Sample {
            mode,
            config,
            epoch,
            seed,
        } => sample(&config, mode, epoch, seed),
        Command::Train {
            task,
            modality,
            fold,
            config,
            seed,
        } => train_one(&config, task, modality, fold, seed),
        Command::Evaluate {
            plan,
            models,
            fuse,
            config,
            out,
            seed,
        } => evaluate(&config, &plan, &models, fuse, out.as_deref(), seed),
        Command::Run { config, seed } => run(&config, seed),
    }
}
