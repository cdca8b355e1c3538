//! Experiment driver behind the `qrkd` binary.
//!
//! Every subcommand writes tidy CSV plus a `report.json` under the output
//! directory (`--out`, else `$QRKD_OUT_DIR`, else `out`). Exit codes: 0 on
//! success, 2 on usage errors, 1 on runtime errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::distill::{
    compute_metrics, distill_with_cache, evaluate, metrics_csv, summarize, train_teacher, DatasetConfig, DistillConfig,
    MeanStd, RunMetrics, RunRecord, TeacherCache, TrainedRun, VariantSummary,
};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;
use crate::kernels::{bound_check, kernel_matrix, offdiag_variance, JLProjector, KernelConfig};
use crate::losses::Variant;
use crate::nn::{load_checkpoint, save_checkpoint, Model};
use crate::qsim::EncodingSpec;
use crate::rng::{substream, Stream};

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "QRKD_OUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "qrkd", version, about = "Quantum relational knowledge distillation experiments")]
pub struct Cli {
    /// Output directory [default: $QRKD_OUT_DIR, else "out"]
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,

    /// Worker threads for independent runs
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    pub jobs: u16,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the teacher network with the task loss only
    TrainTeacher(TrainTeacherArgs),
    /// Distill students from a trained teacher for one or all variants
    Distill(DistillArgs),
    /// Off-diagonal kernel variance against the number of qubits
    KernelVariance(KernelVarianceArgs),
    /// Random-projection error and the projected kernel-difference bound
    Jl(JlArgs),
    /// Distillation with the quantum kernel replaced by a Gaussian kernel
    GaussianSweep(GaussianSweepArgs),
    /// Run the built-in invariant checks
    Selftest,
}

/// Settings shared by the training subcommands.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct RunArgs {
    /// JSON training config; missing keys take the built-in defaults
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,

    /// Number of epochs
    #[arg(long)]
    pub epochs: Option<usize>,

    /// Directory with the MNIST IDX files
    #[arg(long, value_name = "DIR")]
    pub mnist_dir: Option<PathBuf>,

    /// Training subset size (0 keeps the full split)
    #[arg(long)]
    pub train_size: Option<usize>,

    /// Test subset size (0 keeps the full split)
    #[arg(long)]
    pub test_size: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct TrainTeacherArgs {
    #[command(flatten)]
    pub run: RunArgs,

    /// Teacher seed
    #[arg(long)]
    pub seed: Option<u64>,
}

/// `all` or a single variant name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum VariantChoice {
    All,
    One(Variant),
}

fn parse_variant(s: &str) -> std::result::Result<VariantChoice, String> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(VariantChoice::All);
    }
    s.parse::<Variant>().map(VariantChoice::One).map_err(|e| e.to_string())
}

/// Seed list parsed from an inclusive range `a..b` or a comma-separated list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(transparent)]
pub struct Seeds(pub Vec<u64>);

impl std::ops::Deref for Seeds {
    type Target = [u64];
    fn deref(&self) -> &[u64] {
        &self.0
    }
}

fn parse_seeds(s: &str) -> std::result::Result<Seeds, String> {
    let bad = |_| format!("invalid seed list {s:?}; use e.g. 1..5 or 1,2,3");
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(bad)?, b.trim().parse().map_err(bad)?);
        if a > b {
            return Err(format!("empty seed range {s:?}"));
        }
        (a..=b).collect()
    } else {
        s.split(',').map(|p| p.trim().parse().map_err(bad)).collect::<std::result::Result<_, _>>()?
    };
    if seeds.is_empty() {
        return Err("no seeds given".into());
    }
    Ok(Seeds(seeds))
}

fn parse_sigma(s: &str) -> std::result::Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v.is_finite() => Ok(v),
        _ => Err(format!("sigma must be a positive number, got {s:?}")),
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DistillArgs {
    #[command(flatten)]
    pub run: RunArgs,

    /// Variant to train: all, scratch, KD, RKD, QRKD, QRKD-A, QRKD-D or QRKD-Q
    #[arg(long, default_value = "all", value_parser = parse_variant)]
    pub variant: VariantChoice,

    /// Student seeds, e.g. 1..5 or 1,3,7
    #[arg(long, default_value = "1..5", value_parser = parse_seeds)]
    pub seeds: Seeds,

    /// Teacher checkpoint [default: <out>/teacher/teacher-seed<teacher_seed>.ckpt]
    #[arg(long, value_name = "PATH")]
    pub teacher: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelChoice {
    Fidelity,
    Projected,
    Both,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct KernelVarianceArgs {
    /// Qubit counts
    #[arg(long, value_delimiter = ',', default_value = "2,4,6,8,12")]
    pub qubits: Vec<usize>,

    /// Random feature vectors per kernel matrix
    #[arg(long, default_value_t = 200)]
    pub samples: usize,

    /// Feature dimension
    #[arg(long, default_value_t = 192)]
    pub dim: usize,

    /// L2-normalize features and scale them by pi before encoding
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub normalize: bool,

    /// Kernel(s) to evaluate
    #[arg(long, value_enum, default_value_t = KernelChoice::Both)]
    pub kernel: KernelChoice,

    /// Seeds, e.g. 1..5
    #[arg(long, default_value = "1..5", value_parser = parse_seeds)]
    pub seeds: Seeds,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct JlArgs {
    /// Qubits of the exact encoding
    #[arg(long, default_value_t = 12)]
    pub source_qubits: usize,

    /// Projection dimensions
    #[arg(long, value_delimiter = ',', default_value = "64,128,256,512,1024")]
    pub target_dims: Vec<usize>,

    /// Seeds, e.g. 1..5
    #[arg(long, default_value = "1..5", value_parser = parse_seeds)]
    pub seeds: Seeds,

    /// Samples per seed
    #[arg(long, default_value_t = 16)]
    pub samples: usize,

    /// Feature dimension
    #[arg(long, default_value_t = 192)]
    pub dim: usize,

    /// Standard deviation of the noise separating student from teacher features
    #[arg(long, default_value_t = 0.3)]
    pub noise: f64,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GaussianSweepArgs {
    #[command(flatten)]
    pub run: RunArgs,

    /// Kernel bandwidths
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5,0.7,0.9", value_parser = parse_sigma)]
    pub sigmas: Vec<f64>,

    /// Student seeds, e.g. 1..5
    #[arg(long, default_value = "1..5", value_parser = parse_seeds)]
    pub seeds: Seeds,

    /// Teacher checkpoint [default: <out>/teacher/teacher-seed<teacher_seed>.ckpt]
    #[arg(long, value_name = "PATH")]
    pub teacher: Option<PathBuf>,
}

/// What a subcommand did and where its numbers are.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentReport {
    pub command: String,
    pub config_digest: String,
    pub csv_paths: Vec<PathBuf>,
    pub summary_header: Vec<String>,
    pub summary: Vec<Vec<String>>,
    pub wall_clock_seconds: f64,
}

impl ExperimentReport {
    fn print(&self) {
        println!("{} (config {})", self.command, &self.config_digest[..12.min(self.config_digest.len())]);
        if !self.summary.is_empty() {
            let mut widths: Vec<usize> = self.summary_header.iter().map(String::len).collect();
            for row in &self.summary {
                for (w, c) in widths.iter_mut().zip(row) {
                    *w = (*w).max(c.chars().count());
                }
            }
            let line = |cells: &[String]| {
                let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
                println!("  {}", padded.join("  ").trim_end());
            };
            line(&self.summary_header);
            self.summary.iter().for_each(|r| line(r));
        }
        for p in &self.csv_paths {
            println!("  wrote {}", p.display());
        }
        println!("  {:.1} s", self.wall_clock_seconds);
    }
}

/// Output directory and worker count shared by all subcommands.
#[derive(Debug, Clone)]
pub struct Context {
    pub out: PathBuf,
    pub jobs: usize,
}

impl Context {
    pub fn from_cli(cli: &Cli) -> Self {
        let out = cli
            .out
            .clone()
            .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("out"));
        Self {
            out,
            jobs: cli.jobs as usize,
        }
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))
    }
}

/// Parses `args` and runs the subcommand; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(report) => {
            report.print();
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn execute(cli: &Cli) -> Result<ExperimentReport> {
    let ctx = Context::from_cli(cli);
    match &cli.command {
        Command::TrainTeacher(a) => cmd_train_teacher(&ctx, a),
        Command::Distill(a) => cmd_distill(&ctx, a),
        Command::KernelVariance(a) => cmd_kernel_variance(&ctx, a),
        Command::Jl(a) => cmd_jl(&ctx, a),
        Command::GaussianSweep(a) => cmd_gaussian_sweep(&ctx, a),
        Command::Selftest => cmd_selftest(),
    }
}

/// Reads a JSON config (or the defaults) and applies the command-line overrides.
pub fn load_config(run: &RunArgs) -> Result<DistillConfig> {
    let mut config = match &run.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => DistillConfig::default(),
    };
    if let Some(e) = run.epochs {
        config.epochs = e;
    }
    if run.mnist_dir.is_some() || run.train_size.is_some() || run.test_size.is_some() {
        let DatasetConfig::Mnist {
            dir,
            train_size,
            test_size,
            ..
        } = &mut config.dataset
        else {
            return Err(Error::Config("MNIST options given but the config selects another dataset".into()));
        };
        if let Some(d) = &run.mnist_dir {
            *dir = Some(d.clone());
        }
        if let Some(n) = run.train_size {
            *train_size = (n > 0).then_some(n);
        }
        if let Some(n) = run.test_size {
            *test_size = (n > 0).then_some(n);
        }
    }
    Ok(config)
}

/// SHA-256 of the canonical JSON form (object keys sorted).
pub fn config_digest<T: Serialize>(value: &T) -> Result<String> {
    let canonical = canonicalize(serde_json::to_value(value)?);
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(&canonical)?)))
}

fn canonicalize(v: serde_json::Value) -> serde_json::Value {
    use serde_json::Value;
    match v {
        Value::Object(map) => {
            let mut entries: Vec<(String, Value)> = map.into_iter().collect();
            entries.sort_by(|a, b| a.0.cmp(&b.0));
            Value::Object(entries.into_iter().map(|(k, v)| (k, canonicalize(v))).collect())
        }
        Value::Array(items) => Value::Array(items.into_iter().map(canonicalize).collect()),
        other => other,
    }
}

fn teacher_path(ctx: &Context, config: &DistillConfig) -> PathBuf {
    ctx.out.join("teacher").join(format!("teacher-seed{}.ckpt", config.teacher_seed))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

fn f2(v: f64) -> String {
    format!("{v:.2}")
}

fn ms(v: &MeanStd) -> String {
    v.to_string()
}

const SUMMARY_HEADER: [&str; 6] = ["variant", "runs", "train", "test", "T&S gap", "dist gain"];

fn summary_rows(summaries: &[VariantSummary]) -> Vec<Vec<String>> {
    summaries
        .iter()
        .map(|s| {
            vec![
                s.variant.name().to_string(),
                s.runs.to_string(),
                ms(&s.train_acc),
                ms(&s.test_acc),
                ms(&s.ts_gap),
                s.dist_gain.as_ref().map(ms).unwrap_or_default(),
            ]
        })
        .collect()
}

/// Seed-aggregated CSV; `key` prepends a fixed leading column.
fn summary_csv(summaries: &[VariantSummary], key: Option<(&str, String)>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = key.iter().map(|(k, _)| *k).collect();
    header.extend([
        "variant",
        "runs",
        "train_acc_mean",
        "train_acc_std",
        "test_acc_mean",
        "test_acc_std",
        "acc_gap_mean",
        "acc_gap_std",
        "ts_gap_mean",
        "ts_gap_std",
        "dist_gain_mean",
        "dist_gain_std",
    ]);
    w.write_record(&header)?;
    let num = |v: f64| format!("{v:.6}");
    for s in summaries {
        let mut row: Vec<String> = key.iter().map(|(_, v)| v.clone()).collect();
        row.push(s.variant.name().to_string());
        row.push(s.runs.to_string());
        for m in [&s.train_acc, &s.test_acc, &s.acc_gap, &s.ts_gap] {
            row.push(num(m.mean));
            row.push(num(m.std));
        }
        match &s.dist_gain {
            Some(m) => {
                row.push(num(m.mean));
                row.push(num(m.std));
            }
            None => row.extend([String::new(), String::new()]),
        }
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))
}

pub fn cmd_train_teacher(ctx: &Context, args: &TrainTeacherArgs) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut config = load_config(&args.run)?;
    if let Some(seed) = args.seed {
        config.teacher_seed = seed;
    }
    let digest = config_digest(&config)?;
    let (train, test) = config.dataset.load()?;
    let run = train_teacher(&config, &train, &test)?;
    let ckpt = teacher_path(ctx, &config);
    save_checkpoint(&ckpt, &run.model, run.seed)?;

    let metrics = RunMetrics {
        variant: Variant::Scratch,
        seed: run.seed,
        train_acc: run.train_acc,
        test_acc: run.test_acc,
        acc_gap: run.train_acc - run.test_acc,
        ts_gap: 0.0,
        dist_gain: None,
        parameter_count: run.model.parameter_count(),
        epochs: run.epochs.iter().map(|e| e.mean).collect(),
    };
    let csv_text = String::from_utf8(metrics_csv(&[metrics])?).expect("csv output is UTF-8");
    // The teacher is trained like the scratch baseline but labelled as itself.
    let csv_text: String = csv_text
        .lines()
        .enumerate()
        .map(|(i, l)| if i == 0 { format!("{l}\n") } else { format!("teacher{}\n", &l["scratch".len()..]) })
        .collect();
    let dir = ctx.out.join("teacher");
    let csv_path = dir.join(format!("teacher-seed{}.csv", config.teacher_seed));
    write_atomic(&csv_path, csv_text.as_bytes())?;

    let report = ExperimentReport {
        command: "train-teacher".into(),
        config_digest: digest,
        csv_paths: vec![csv_path],
        summary_header: ["model", "parameters", "train", "test", "checkpoint"].map(String::from).to_vec(),
        summary: vec![vec![
            "teacher".into(),
            run.model.parameter_count().to_string(),
            f2(run.train_acc),
            f2(run.test_acc),
            ckpt.display().to_string(),
        ]],
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

fn load_teacher(ctx: &Context, config: &DistillConfig, explicit: Option<&Path>) -> Result<Model> {
    let path = explicit.map(Path::to_path_buf).unwrap_or_else(|| teacher_path(ctx, config));
    if !path.exists() {
        return Err(Error::Config(format!(
            "teacher checkpoint {} not found; run `qrkd train-teacher` first or pass --teacher",
            path.display()
        )));
    }
    Ok(load_checkpoint(&path)?.0)
}

/// Runs every `(variant, seed)` job on the worker pool, in job order.
fn run_jobs(
    ctx: &Context,
    config: &DistillConfig,
    jobs: &[(Variant, u64, KernelConfig)],
    train: &crate::data::LabeledDataset,
    test: &crate::data::LabeledDataset,
    cache: &TeacherCache,
) -> Result<Vec<TrainedRun>> {
    ctx.pool()?.install(|| {
        jobs.par_iter()
            .map(|&(variant, seed, kernel)| {
                let cfg = DistillConfig {
                    variant,
                    seed,
                    kernel,
                    ..config.clone()
                };
                distill_with_cache(&cfg, train, test, Some(cache))
            })
            .collect()
    })
}

pub fn cmd_distill(ctx: &Context, args: &DistillArgs) -> Result<ExperimentReport> {
    let start = Instant::now();
    let config = load_config(&args.run)?;
    config.validate()?;
    let mut variants = match args.variant {
        VariantChoice::All => Variant::ALL.to_vec(),
        VariantChoice::One(v) => vec![v],
    };
    if !variants.contains(&Variant::Scratch) {
        variants.insert(0, Variant::Scratch);
    }
    let digest = config_digest(&(&config, &variants, &args.seeds))?;
    let teacher = load_teacher(ctx, &config, args.teacher.as_deref())?;
    let (train, test) = config.dataset.load()?;
    let teacher_test = evaluate(&teacher, &test)?;
    let cache = TeacherCache::new(&teacher, &train)?;

    let jobs: Vec<(Variant, u64, KernelConfig)> = variants
        .iter()
        .flat_map(|&v| args.seeds.iter().map(move |&s| (v, s, config.kernel)))
        .collect();
    let runs = run_jobs(ctx, &config, &jobs, &train, &test, &cache)?;

    let dir = ctx.out.join("distill");
    for run in &runs {
        save_checkpoint(&dir.join("checkpoints").join(format!("{}-seed{}.ckpt", run.variant, run.seed)), &run.model, run.seed)?;
    }
    let records: Vec<RunRecord> = runs.iter().map(TrainedRun::record).collect();
    let scratch: Vec<RunRecord> = records.iter().filter(|r| r.variant == Variant::Scratch).cloned().collect();
    let metrics = compute_metrics(&records, &scratch, teacher_test)?;
    let summaries = summarize(&metrics);

    let csv_path = dir.join("metrics.csv");
    write_atomic(&csv_path, &metrics_csv(&metrics)?)?;
    let summary_path = dir.join("summary.csv");
    write_atomic(&summary_path, &summary_csv(&summaries, None)?)?;
    let mut rows = summary_rows(&summaries);
    rows.push(vec!["teacher".into(), "1".into(), String::new(), f2(teacher_test), String::new(), String::new()]);
    let report = ExperimentReport {
        command: "distill".into(),
        config_digest: digest,
        csv_paths: vec![csv_path, summary_path],
        summary_header: SUMMARY_HEADER.map(String::from).to_vec(),
        summary: rows,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

pub fn cmd_gaussian_sweep(ctx: &Context, args: &GaussianSweepArgs) -> Result<ExperimentReport> {
    let start = Instant::now();
    let mut config = load_config(&args.run)?;
    if config.coefficients().omega == 0.0 {
        config.variant = Variant::Qrkd;
        config.weights = None;
    }
    for &sigma in &args.sigmas {
        KernelConfig::Gaussian { sigma }.validate()?;
    }
    config.validate()?;
    let digest = config_digest(&(&config, &args.sigmas, &args.seeds))?;
    let teacher = load_teacher(ctx, &config, args.teacher.as_deref())?;
    let (train, test) = config.dataset.load()?;
    let teacher_test = evaluate(&teacher, &test)?;
    let cache = TeacherCache::new(&teacher, &train)?;

    let mut jobs: Vec<(Variant, u64, KernelConfig)> =
        args.seeds.iter().map(|&s| (Variant::Scratch, s, config.kernel)).collect();
    for &sigma in &args.sigmas {
        jobs.extend(args.seeds.iter().map(|&s| (config.variant, s, KernelConfig::Gaussian { sigma })));
    }
    let runs = run_jobs(ctx, &config, &jobs, &train, &test, &cache)?;
    let (scratch_runs, sweep_runs) = runs.split_at(args.seeds.len());
    let scratch: Vec<RunRecord> = scratch_runs.iter().map(TrainedRun::record).collect();

    let dir = ctx.out.join("gaussian_sweep");
    let mut csv_paths = Vec::new();
    let mut rows = Vec::new();
    let mut combined = Vec::new();
    for (sigma, chunk) in args.sigmas.iter().zip(sweep_runs.chunks(args.seeds.len())) {
        let mut records = scratch.clone();
        records.extend(chunk.iter().map(TrainedRun::record));
        let metrics = compute_metrics(&records, &scratch, teacher_test)?;
        let path = dir.join(format!("sigma-{sigma}")).join("metrics.csv");
        write_atomic(&path, &metrics_csv(&metrics)?)?;
        csv_paths.push(path);
        let summaries: Vec<VariantSummary> = summarize(&metrics).into_iter().filter(|s| s.variant != Variant::Scratch).collect();
        combined.extend(summary_csv(&summaries, Some(("sigma", sigma.to_string())))?.into_iter());
        for mut row in summary_rows(&summaries) {
            row.insert(0, sigma.to_string());
            rows.push(row);
        }
    }
    // Keep a single header in the combined summary.
    let text = String::from_utf8(combined).expect("csv output is UTF-8");
    let mut seen_header = false;
    let merged: String = text
        .lines()
        .filter(|l| {
            let header = l.starts_with("sigma,");
            let keep = !header || !seen_header;
            seen_header |= header;
            keep
        })
        .map(|l| format!("{l}\n"))
        .collect();
    let summary_path = dir.join("summary.csv");
    write_atomic(&summary_path, merged.as_bytes())?;
    csv_paths.push(summary_path);

    let mut header = vec!["sigma".to_string()];
    header.extend(SUMMARY_HEADER.map(String::from));
    let report = ExperimentReport {
        command: "gaussian-sweep".into(),
        config_digest: digest,
        csv_paths,
        summary_header: header,
        summary: rows,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

/// `count` standard-normal vectors of length `dim` from the seed's feature stream.
pub fn gaussian_features(seed: u64, count: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = substream(seed, Stream::Features);
    (0..count)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
        .collect()
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

pub fn cmd_kernel_variance(ctx: &Context, args: &KernelVarianceArgs) -> Result<ExperimentReport> {
    let start = Instant::now();
    if args.samples < 2 || args.dim == 0 || args.qubits.is_empty() {
        return Err(Error::InvalidArgument("need at least 2 samples, a positive dimension and one qubit count".into()));
    }
    for &n in &args.qubits {
        EncodingSpec::fitting(n, args.dim, args.normalize).validate()?;
    }
    let digest = config_digest(args)?;
    let kernels: Vec<KernelConfig> = match args.kernel {
        KernelChoice::Fidelity => vec![KernelConfig::Fidelity],
        KernelChoice::Projected => vec![KernelConfig::Projected],
        KernelChoice::Both => vec![KernelConfig::Fidelity, KernelConfig::Projected],
    };
    let jobs: Vec<(u64, usize)> = args.seeds.iter().flat_map(|&s| args.qubits.iter().map(move |&n| (s, n))).collect();
    let results: Vec<Vec<(u64, usize, KernelConfig, f64, f64)>> = ctx.pool()?.install(|| {
        jobs.par_iter()
            .map(|&(seed, n)| {
                let samples = gaussian_features(seed, args.samples, args.dim);
                let spec = EncodingSpec::fitting(n, args.dim, args.normalize);
                kernels
                    .iter()
                    .map(|k| {
                        let stats = offdiag_variance(&kernel_matrix(&samples, k, &spec)?)?;
                        Ok((seed, n, *k, stats.mean, stats.variance))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let rows: Vec<_> = results.into_iter().flatten().collect();

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n_qubits", "kernel", "normalized", "seed", "mean", "variance", "trend"])?;
    for (seed, n, k, mean, var) in &rows {
        w.write_record([
            n.to_string(),
            k.kind().to_string(),
            args.normalize.to_string(),
            seed.to_string(),
            format!("{mean:.12e}"),
            format!("{var:.12e}"),
            String::new(),
        ])?;
    }
    let mut summary = Vec::new();
    for k in &kernels {
        let medians: Vec<f64> = args
            .qubits
            .iter()
            .map(|&n| {
                let mut v: Vec<f64> = rows.iter().filter(|r| r.1 == n && r.2 == *k).map(|r| r.4).collect();
                median(&mut v)
            })
            .collect();
        let decreasing = medians.windows(2).all(|w| w[1] < w[0]);
        let trend = if decreasing { "decreasing" } else { "not_decreasing" };
        w.write_record([
            String::new(),
            k.kind().to_string(),
            args.normalize.to_string(),
            "median".into(),
            String::new(),
            String::new(),
            trend.into(),
        ])?;
        for (&n, m) in args.qubits.iter().zip(&medians) {
            summary.push(vec![k.kind().to_string(), n.to_string(), format!("{m:.4e}"), trend.to_string()]);
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    let dir = ctx.out.join("kernel_variance");
    let csv_path = dir.join("kernel_variance.csv");
    write_atomic(&csv_path, &bytes)?;
    let report = ExperimentReport {
        command: "kernel-variance".into(),
        config_digest: digest,
        csv_paths: vec![csv_path],
        summary_header: ["kernel", "qubits", "median variance", "trend"].map(String::from).to_vec(),
        summary,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

/// Teacher and student feature draws for the projection experiment.
pub fn jl_features(seed: u64, samples: usize, dim: usize, noise: f64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let teacher = gaussian_features(seed, samples, dim);
    let mut rng = substream(seed, Stream::Pairs);
    let student = teacher
        .iter()
        .map(|t| {
            t.iter()
                .map(|v| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    v + noise * z
                })
                .collect()
        })
        .collect();
    (teacher, student)
}

/// Projector seed for one `(seed, target_dim)` cell.
pub fn jl_projector_seed(seed: u64, target_dim: usize) -> u64 {
    seed.wrapping_mul(1_000_003).wrapping_add(target_dim as u64)
}

pub fn cmd_jl(ctx: &Context, args: &JlArgs) -> Result<ExperimentReport> {
    let start = Instant::now();
    let spec = EncodingSpec::fitting(args.source_qubits, args.dim, true);
    spec.validate()?;
    let source = 1usize << args.source_qubits;
    if let Some(&bad) = args.target_dims.iter().find(|&&k| k == 0 || k > source) {
        return Err(Error::InvalidArgument(format!("target dimension {bad} must be in 1..={source}")));
    }
    if args.samples < 2 || !(args.noise >= 0.0) {
        return Err(Error::InvalidArgument("need at least 2 samples and non-negative noise".into()));
    }
    let digest = config_digest(args)?;
    let jobs: Vec<(usize, u64)> = args.target_dims.iter().flat_map(|&k| args.seeds.iter().map(move |&s| (k, s))).collect();
    let rows: Vec<(usize, u64, f64, f64, f64, bool)> = ctx.pool()?.install(|| {
        jobs.par_iter()
            .map(|&(k, seed)| {
                let (teacher, student) = jl_features(seed, args.samples, args.dim, args.noise);
                let projector = JLProjector::new(k, source, jl_projector_seed(seed, k))?;
                let r = bound_check(&student, &teacher, &spec, &projector)?;
                Ok((k, seed, r.eps_teacher, r.eps_student, r.min_slack(), r.passed))
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["target_dim", "seed", "eps_teacher", "eps_student", "eps_max", "min_slack", "bound_pass"])?;
    for (k, seed, et, es, slack, pass) in &rows {
        w.write_record([
            k.to_string(),
            seed.to_string(),
            format!("{et:.12e}"),
            format!("{es:.12e}"),
            format!("{:.12e}", et.max(*es)),
            format!("{slack:.12e}"),
            pass.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))?;
    let mut summary = Vec::new();
    let mut medians = Vec::new();
    for &k in &args.target_dims {
        let cell: Vec<_> = rows.iter().filter(|r| r.0 == k).collect();
        let mut eps: Vec<f64> = cell.iter().map(|r| r.2.max(r.3)).collect();
        let m = median(&mut eps);
        medians.push(m);
        let passed = cell.iter().filter(|r| r.5).count();
        summary.push(vec![k.to_string(), format!("{m:.4}"), format!("{passed}/{}", cell.len())]);
    }
    let monotone = medians.windows(2).all(|w| w[1] <= w[0]);
    summary.push(vec!["trend".into(), if monotone { "nonincreasing" } else { "not monotone" }.into(), String::new()]);

    let dir = ctx.out.join("jl");
    let csv_path = dir.join("jl.csv");
    write_atomic(&csv_path, &bytes)?;
    let report = ExperimentReport {
        command: "jl".into(),
        config_digest: digest,
        csv_paths: vec![csv_path],
        summary_header: ["dim", "median eps", "bound passed"].map(String::from).to_vec(),
        summary,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    write_json(&dir.join("report.json"), &report)?;
    Ok(report)
}

pub fn cmd_selftest() -> Result<ExperimentReport> {
    let start = Instant::now();
    let checks = crate::selftest::run_all()?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    let summary = checks
        .iter()
        .map(|c| vec![if c.passed { "ok" } else { "FAIL" }.to_string(), c.name.to_string(), c.detail.clone()])
        .collect();
    let report = ExperimentReport {
        command: "selftest".into(),
        config_digest: config_digest(&"selftest")?,
        csv_paths: Vec::new(),
        summary_header: ["status", "check", "detail"].map(String::from).to_vec(),
        summary,
        wall_clock_seconds: start.elapsed().as_secs_f64(),
    };
    if failed > 0 {
        report.print();
        return Err(Error::validation(format!("{failed} of {} checks failed", checks.len())));
    }
    Ok(report)
}
