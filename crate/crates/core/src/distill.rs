//! Teacher training, student distillation and run metrics.
//!
//! One training step forwards the student, looks up the frozen teacher's
//! cached outputs for the same samples, averages each batch into `g`
//! contiguous group representatives, draws the pair set once and evaluates
//! every enabled loss term on it. Gradients of the relational terms are
//! pushed back through the group means into the student's tapped features.

use std::path::PathBuf;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{self, LabeledDataset, Split};
use crate::error::{Error, Result};
use crate::kernels::{GradientMethod, KernelConfig};
use crate::losses::{
    angle_loss_over, distance_loss_over, kd_loss, quantum_relational_loss, total_loss, triplets_from_pairs,
    LossBreakdown, LossCoefficients, LossComponents, Pair, Variant,
};
use crate::nn::{adam_step, softmax_rows, AdamConfig, AdamState, Graph, Model, ModelSpec, Tensor};
use crate::qsim::EncodingSpec;
use crate::rng::{substream, Stream};

/// Inference chunk size; has no effect on results.
const EVAL_CHUNK: usize = 500;

/// Where training and test samples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetConfig {
    /// MNIST IDX files. `None` sizes keep the full split.
    Mnist {
        #[serde(default)]
        dir: Option<PathBuf>,
        #[serde(default)]
        train_size: Option<usize>,
        #[serde(default)]
        test_size: Option<usize>,
        #[serde(default)]
        subset_seed: u64,
    },
    /// Synthetic Gaussian blobs of `side x side` images.
    Blobs {
        classes: usize,
        train_per_class: usize,
        test_per_class: usize,
        side: usize,
        spread: f64,
        #[serde(default)]
        subset_seed: u64,
    },
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig::Mnist {
            dir: None,
            train_size: Some(10_000),
            test_size: Some(2_000),
            subset_seed: 0,
        }
    }
}

impl DatasetConfig {
    /// Loads `(train, test)`.
    pub fn load(&self) -> Result<(LabeledDataset, LabeledDataset)> {
        match self {
            DatasetConfig::Mnist {
                dir,
                train_size,
                test_size,
                subset_seed,
            } => {
                let dir = dir.clone().unwrap_or_else(data::default_mnist_dir);
                let mut train = data::load_mnist_dir(&dir, Split::Train)?;
                let mut test = data::load_mnist_dir(&dir, Split::Test)?;
                if let Some(n) = train_size {
                    train = data::subset(&train, *n, *subset_seed)?;
                }
                if let Some(n) = test_size {
                    test = data::subset(&test, *n, subset_seed.wrapping_add(1))?;
                }
                Ok((train, test))
            }
            DatasetConfig::Blobs {
                classes,
                train_per_class,
                test_per_class,
                side,
                spread,
                subset_seed,
            } => {
                let all = data::synthetic_blobs(*classes, train_per_class + test_per_class, side * side, *spread, *subset_seed)?;
                // Blobs interleave classes, so a prefix split stays balanced.
                let cut = classes * train_per_class;
                let train = all.select(&(0..cut).collect::<Vec<_>>())?;
                let mut test = all.select(&(cut..all.len()).collect::<Vec<_>>())?;
                test.split = Split::Test;
                Ok((train, test))
            }
        }
    }
}

/// Everything that determines one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    pub variant: Variant,
    /// Overrides the variant's weights when set; `tau` and `delta` below still apply.
    pub weights: Option<[f64; 5]>,
    pub tau: f64,
    pub delta: f64,
    pub kernel: KernelConfig,
    pub encoding: EncodingSpec,
    pub gradient: GradientMethod,
    /// Divide pairwise distances by their mean before comparing them.
    pub normalize_distance: bool,
    pub group_count: usize,
    pub pairs_per_batch: usize,
    pub optimizer: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Seed of the teacher run that students are distilled from.
    pub teacher_seed: u64,
    pub dataset: DatasetConfig,
    pub student: ModelSpec,
    pub teacher: ModelSpec,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self {
            variant: Variant::Qrkd,
            weights: None,
            tau: 2.0,
            delta: 1.0,
            kernel: KernelConfig::Fidelity,
            encoding: EncodingSpec::fitting(4, 192, true),
            gradient: GradientMethod::Adjoint,
            normalize_distance: false,
            group_count: 4,
            pairs_per_batch: 4,
            optimizer: AdamConfig::default(),
            epochs: 10,
            batch_size: 64,
            seed: 1,
            teacher_seed: 0,
            dataset: DatasetConfig::default(),
            student: ModelSpec::mnist_student(),
            teacher: ModelSpec::mnist_teacher(),
        }
    }
}

impl DistillConfig {
    pub fn coefficients(&self) -> LossCoefficients {
        let mut c = self.variant.coefficients();
        if let Some([a, b, d, g, w]) = self.weights {
            c = LossCoefficients::new(a, b, d, g, w);
        }
        c.tau = self.tau;
        c.delta = self.delta;
        c
    }

    pub fn validate(&self) -> Result<()> {
        self.coefficients().validate()?;
        self.kernel.validate()?;
        self.encoding.validate()?;
        self.optimizer.validate()?;
        let g = self.group_count;
        if g < 2 {
            return Err(Error::validation(format!("group_count must be at least 2, got {g}")));
        }
        if self.pairs_per_batch == 0 || self.pairs_per_batch > g * g {
            return Err(Error::validation(format!(
                "pairs_per_batch must be in 1..={}, got {}",
                g * g,
                self.pairs_per_batch
            )));
        }
        if self.batch_size == 0 || self.batch_size % g != 0 {
            return Err(Error::validation(format!(
                "batch_size {} is not divisible by group_count {g}",
                self.batch_size
            )));
        }
        if self.epochs == 0 {
            return Err(Error::validation("epochs must be positive"));
        }
        let s = self.student.feature_shape()?;
        let t = self.teacher.feature_shape()?;
        if s.iter().product::<usize>() != t.iter().product::<usize>() {
            return Err(Error::validation(format!("student feature tap {s:?} and teacher tap {t:?} differ in size")));
        }
        if self.student.classes()? != self.teacher.classes()? {
            return Err(Error::validation("student and teacher disagree on the class count"));
        }
        Ok(())
    }
}

/// Averages contiguous groups of rows: `rows.len() / g` rows per group.
pub fn group_means(rows: &[Vec<f64>], g: usize) -> Result<Vec<Vec<f64>>> {
    if g == 0 || rows.is_empty() || rows.len() % g != 0 {
        return Err(Error::validation(format!("batch of {} is not divisible into {g} groups", rows.len())));
    }
    let size = rows.len() / g;
    Ok(rows
        .chunks(size)
        .map(|group| {
            let mut mean = vec![0.0; group[0].len()];
            for r in group {
                mean.iter_mut().zip(r).for_each(|(m, v)| *m += v);
            }
            mean.iter_mut().for_each(|m| *m /= size as f64);
            mean
        })
        .collect())
}

/// Draws `count` of the `g * g` ordered pairs (self-pairs included) without
/// replacement, returned in candidate order. All pairs are returned without
/// touching `rng` when `count == g * g`.
pub fn draw_pairs<R: Rng + ?Sized>(g: usize, count: usize, rng: &mut R) -> Result<Vec<Pair>> {
    let total = g * g;
    if count == 0 || count > total {
        return Err(Error::validation(format!("cannot draw {count} of {total} pairs")));
    }
    let mut chosen: Vec<usize> = if count == total {
        (0..total).collect()
    } else {
        index::sample(rng, total, count).into_vec()
    };
    chosen.sort_unstable();
    Ok(chosen.into_iter().map(|c| (c / g, c % g)).collect())
}

/// Group representatives of a batch and the pairs drawn among them.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePairs {
    pub representatives: Vec<Vec<f64>>,
    pub pairs: Vec<Pair>,
}

/// Averages `features` into `g` contiguous groups and draws
/// `pairs_per_batch` of the `g * g` candidate pairs.
pub fn sample_feature_pairs<R: Rng + ?Sized>(
    features: &[Vec<f64>],
    g: usize,
    pairs_per_batch: usize,
    rng: &mut R,
) -> Result<FeaturePairs> {
    let representatives = group_means(features, g)?;
    let pairs = draw_pairs(g, pairs_per_batch, rng)?;
    Ok(FeaturePairs { representatives, pairs })
}

/// Flattened per-sample rows of a `[B, ...]` tensor.
pub fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    let b = t.shape()[0];
    if b == 0 {
        return Vec::new();
    }
    t.values.chunks(t.numel() / b).map(<[f64]>::to_vec).collect()
}

/// The combined objective on one batch.
#[derive(Debug, Clone)]
pub struct Objective {
    pub coefficients: LossCoefficients,
    pub encoding: EncodingSpec,
    pub kernel: KernelConfig,
    pub gradient: GradientMethod,
    pub normalize_distance: bool,
    pub group_count: usize,
}

/// Loss values and the cotangents to seed into the student graph.
#[derive(Debug, Clone)]
pub struct BatchGradients {
    pub losses: LossBreakdown,
    pub logits: Vec<f64>,
    pub features: Option<Vec<f64>>,
}

impl Objective {
    pub fn from_config(config: &DistillConfig) -> Self {
        Self {
            coefficients: config.coefficients(),
            encoding: config.encoding.clone(),
            kernel: config.kernel,
            gradient: config.gradient,
            normalize_distance: config.normalize_distance,
            group_count: config.group_count,
        }
    }

    /// Evaluates every term with a nonzero weight; the others are reported as 0.
    /// `teacher` holds `(features, logits)` rows and may be `None` only when
    /// the objective ignores the teacher.
    pub fn evaluate(
        &self,
        student_features: &[Vec<f64>],
        student_logits: &[Vec<f64>],
        teacher: Option<(&[Vec<f64>], &[Vec<f64>])>,
        labels: &[usize],
        pairs: &[Pair],
    ) -> Result<BatchGradients> {
        let k = &self.coefficients;
        let batch = student_logits.len();
        let classes = student_logits.first().map_or(0, Vec::len);
        let mut c = LossComponents::default();
        let mut glogits = vec![0.0; batch * classes];

        if k.alpha > 0.0 {
            let flat: Vec<f64> = student_logits.concat();
            let p = softmax_rows(&flat, classes);
            for (b, &label) in labels.iter().enumerate() {
                c.task -= p[b * classes + label].max(f64::MIN_POSITIVE).ln() / batch as f64;
                for j in 0..classes {
                    let onehot = if j == label { 1.0 } else { 0.0 };
                    glogits[b * classes + j] += k.alpha * (p[b * classes + j] - onehot) / batch as f64;
                }
            }
        }
        let needs_teacher = !k.teacher_free();
        let teacher = match (needs_teacher, teacher) {
            (false, _) => None,
            (true, Some(t)) => Some(t),
            (true, None) => return Err(Error::validation("this objective needs teacher outputs")),
        };
        if let Some((_, t_logits)) = teacher {
            if k.beta > 0.0 {
                let kd = kd_loss(student_logits, t_logits, k.tau)?;
                c.kd = kd.value;
                for (dst, src) in glogits.chunks_mut(classes).zip(&kd.grad) {
                    dst.iter_mut().zip(src).for_each(|(d, s)| *d += k.beta * s);
                }
            }
        }

        let mut gfeatures = None;
        if let Some((t_features, _)) = teacher {
            if k.gamma_d > 0.0 || k.gamma_a > 0.0 || k.omega > 0.0 {
                let g = self.group_count;
                let reps_s = group_means(student_features, g)?;
                let reps_t = group_means(t_features, g)?;
                let dim = reps_s[0].len();
                let mut grep = vec![vec![0.0; dim]; g];
                let mut add = |weight: f64, grad: &[Vec<f64>]| {
                    for (d, s) in grep.iter_mut().zip(grad) {
                        d.iter_mut().zip(s).for_each(|(d, s)| *d += weight * s);
                    }
                };
                if k.gamma_d > 0.0 {
                    let dr = distance_loss_over(&reps_s, &reps_t, pairs, k.delta, self.normalize_distance)?;
                    c.dr = dr.value;
                    add(k.gamma_d, &dr.grad);
                }
                if k.gamma_a > 0.0 {
                    let triplets = triplets_from_pairs(pairs, g);
                    let ar = angle_loss_over(&reps_s, &reps_t, &triplets, k.delta)?;
                    c.ar = ar.value;
                    add(k.gamma_a, &ar.grad);
                }
                if k.omega > 0.0 {
                    let qr = quantum_relational_loss(&reps_s, &reps_t, &self.encoding, &self.kernel, pairs, k.delta, self.gradient)?;
                    c.qr = qr.value;
                    add(k.omega, &qr.grad);
                }
                let size = batch / g;
                let mut gf = Vec::with_capacity(batch * dim);
                for rep in &grep {
                    for _ in 0..size {
                        gf.extend(rep.iter().map(|v| v / size as f64));
                    }
                }
                gfeatures = Some(gf);
            }
        }
        let losses = total_loss(&c, k)?;
        if !losses.is_finite() {
            return Err(Error::NonFinite(format!("batch losses {losses:?}")));
        }
        Ok(BatchGradients {
            losses,
            logits: glogits,
            features: gfeatures,
        })
    }
}

/// Frozen teacher outputs for every training sample.
#[derive(Debug, Clone)]
pub struct TeacherCache {
    features: Vec<Vec<f64>>,
    logits: Vec<Vec<f64>>,
}

impl TeacherCache {
    pub fn new(teacher: &Model, dataset: &LabeledDataset) -> Result<Self> {
        let mut features = Vec::with_capacity(dataset.len());
        let mut logits = Vec::with_capacity(dataset.len());
        let all: Vec<usize> = (0..dataset.len()).collect();
        for chunk in all.chunks(EVAL_CHUNK) {
            let (x, _) = dataset.batch(chunk)?;
            let (h, f) = teacher.infer(&x)?;
            features.extend(rows(&h));
            logits.extend(rows(&f));
        }
        Ok(Self { features, logits })
    }

    fn gather(&self, indices: &[usize]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (
            indices.iter().map(|&i| self.features[i].clone()).collect(),
            indices.iter().map(|&i| self.logits[i].clone()).collect(),
        )
    }
}

/// Mean losses of one epoch and the per-batch totals behind them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean: LossBreakdown,
    pub batch_totals: Vec<f64>,
}

/// A finished training run.
#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub variant: Variant,
    pub seed: u64,
    pub model: Model,
    pub epochs: Vec<EpochLog>,
    pub train_acc: f64,
    pub test_acc: f64,
}

impl TrainedRun {
    pub fn record(&self) -> RunRecord {
        RunRecord {
            variant: self.variant,
            seed: self.seed,
            train_acc: self.train_acc,
            test_acc: self.test_acc,
            parameter_count: self.model.parameter_count(),
            epochs: self.epochs.iter().map(|e| e.mean).collect(),
        }
    }
}

/// Batches of one epoch: shuffled order, full batches, plus the remainder
/// when it still splits into whole groups.
fn epoch_batches(n: usize, batch_size: usize, g: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() == batch_size || (c.len() >= g && c.len() % g == 0))
        .map(<[usize]>::to_vec)
        .collect()
}

fn train(
    mut model: Model,
    objective: &Objective,
    teacher: Option<&TeacherCache>,
    config: &DistillConfig,
    seed: u64,
    train_set: &LabeledDataset,
) -> Result<(Model, Vec<EpochLog>)> {
    let mut shuffle = substream(seed, Stream::Shuffle);
    let mut pair_rng = substream(seed, Stream::Pairs);
    let mut adam = AdamState::new(config.optimizer, &model.params);
    let g = objective.group_count;
    let mut logs = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        let batches = epoch_batches(train_set.len(), config.batch_size, g, &mut shuffle);
        if batches.is_empty() {
            return Err(Error::validation("training set is smaller than one group"));
        }
        let mut sum = LossBreakdown::default();
        let mut totals = Vec::with_capacity(batches.len());
        for indices in &batches {
            let (x, labels) = train_set.batch(indices)?;
            let pairs = draw_pairs(g, config.pairs_per_batch, &mut pair_rng)?;
            let mut graph = Graph::new();
            let (h, f) = model.forward(&mut graph, &x, true)?;
            let hs = rows(&graph.tensor(h)?);
            let fs = rows(&graph.tensor(f)?);
            let t = teacher.map(|t| t.gather(indices));
            let grads = objective.evaluate(&hs, &fs, t.as_ref().map(|(a, b)| (a.as_slice(), b.as_slice())), &labels, &pairs)?;
            model.zero_grad();
            let mut seeds: Vec<(crate::nn::Var, &[f64])> = vec![(f, &grads.logits)];
            if let Some(gf) = &grads.features {
                seeds.push((h, gf));
            }
            graph.backward_seeded(&seeds, &mut model.params)?;
            if model.params.iter().any(|p| p.grad.iter().any(|v| !v.is_finite())) {
                return Err(Error::NonFinite(format!("gradient at epoch {epoch}")));
            }
            adam_step(&mut model.params, &mut adam)?;
            sum.accumulate(&grads.losses);
            totals.push(grads.losses.total);
        }
        let mean = sum.scaled(1.0 / batches.len() as f64);
        if !mean.is_finite() {
            return Err(Error::NonFinite(format!("epoch {epoch} losses {mean:?}")));
        }
        logs.push(EpochLog {
            epoch,
            mean,
            batch_totals: totals,
        });
    }
    Ok((model, logs))
}

/// Argmax accuracy in percent.
pub fn evaluate(model: &Model, dataset: &LabeledDataset) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::validation("cannot evaluate on an empty dataset"));
    }
    let all: Vec<usize> = (0..dataset.len()).collect();
    let mut correct = 0usize;
    for chunk in all.chunks(EVAL_CHUNK) {
        let (x, labels) = dataset.batch(chunk)?;
        let (_, f) = model.infer(&x)?;
        for (row, label) in rows(&f).iter().zip(labels) {
            let best = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
            if best.0 == label {
                correct += 1;
            }
        }
    }
    Ok(100.0 * correct as f64 / dataset.len() as f64)
}

/// Trains the teacher architecture with the task loss only.
pub fn train_teacher(config: &DistillConfig, train_set: &LabeledDataset, test_set: &LabeledDataset) -> Result<TrainedRun> {
    let mut cfg = config.clone();
    cfg.variant = Variant::Scratch;
    cfg.weights = None;
    cfg.student = config.teacher.clone();
    cfg.validate()?;
    let seed = config.teacher_seed;
    let model = Model::new(config.teacher.clone(), seed)?;
    let objective = Objective::from_config(&cfg);
    let (model, epochs) = train(model, &objective, None, &cfg, seed, train_set)?;
    Ok(TrainedRun {
        variant: Variant::Scratch,
        seed,
        train_acc: evaluate(&model, train_set)?,
        test_acc: evaluate(&model, test_set)?,
        model,
        epochs,
    })
}

/// Distills `config.student` from a frozen `teacher` with the configured variant.
/// The teacher is never modified; `teacher` may be `None` only for teacher-free variants.
pub fn distill_student(
    config: &DistillConfig,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    teacher: Option<&Model>,
) -> Result<TrainedRun> {
    config.validate()?;
    let objective = Objective::from_config(config);
    let cache = match teacher {
        Some(t) if !objective.coefficients.teacher_free() => {
            if t.spec.feature_shape()?.iter().product::<usize>() != config.student.feature_shape()?.iter().product::<usize>() {
                return Err(Error::validation("teacher feature tap does not match the student's"));
            }
            Some(TeacherCache::new(t, train_set)?)
        }
        None if !objective.coefficients.teacher_free() => {
            return Err(Error::validation(format!("variant {} needs a teacher", config.variant)))
        }
        _ => None,
    };
    distill_with_cache(config, train_set, test_set, cache.as_ref())
}

/// As [`distill_student`] with precomputed teacher outputs for `train_set`.
pub fn distill_with_cache(
    config: &DistillConfig,
    train_set: &LabeledDataset,
    test_set: &LabeledDataset,
    cache: Option<&TeacherCache>,
) -> Result<TrainedRun> {
    config.validate()?;
    let objective = Objective::from_config(config);
    let model = Model::new(config.student.clone(), config.seed)?;
    let cache = if objective.coefficients.teacher_free() { None } else { cache };
    let (model, epochs) = train(model, &objective, cache, config, config.seed, train_set)?;
    Ok(TrainedRun {
        variant: config.variant,
        seed: config.seed,
        train_acc: evaluate(&model, train_set)?,
        test_acc: evaluate(&model, test_set)?,
        model,
        epochs,
    })
}

/// The outcome of one run as stored for metric computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub variant: Variant,
    pub seed: u64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub parameter_count: usize,
    pub epochs: Vec<LossBreakdown>,
}

/// Per-run accuracy metrics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub variant: Variant,
    pub seed: u64,
    pub train_acc: f64,
    pub test_acc: f64,
    pub acc_gap: f64,
    pub ts_gap: f64,
    /// `None` for the scratch baseline itself.
    pub dist_gain: Option<f64>,
    pub parameter_count: usize,
    pub epochs: Vec<LossBreakdown>,
}

/// Fills the gap columns. Each student run is compared against the scratch
/// run with the same seed.
pub fn compute_metrics(students: &[RunRecord], scratch: &[RunRecord], teacher_test_acc: f64) -> Result<Vec<RunMetrics>> {
    students
        .iter()
        .map(|r| {
            let dist_gain = if r.variant == Variant::Scratch {
                None
            } else {
                let base = scratch
                    .iter()
                    .find(|s| s.seed == r.seed)
                    .ok_or_else(|| Error::validation(format!("no scratch run for seed {}", r.seed)))?;
                Some(r.test_acc - base.test_acc)
            };
            Ok(RunMetrics {
                variant: r.variant,
                seed: r.seed,
                train_acc: r.train_acc,
                test_acc: r.test_acc,
                acc_gap: r.train_acc - r.test_acc,
                ts_gap: teacher_test_acc - r.test_acc,
                dist_gain,
                parameter_count: r.parameter_count,
                epochs: r.epochs.clone(),
            })
        })
        .collect()
}

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, std })
    }
}

impl std::fmt::Display for MeanStd {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

/// Seed-aggregated metrics of one variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariantSummary {
    pub variant: Variant,
    pub runs: usize,
    pub train_acc: MeanStd,
    pub test_acc: MeanStd,
    pub acc_gap: MeanStd,
    pub ts_gap: MeanStd,
    pub dist_gain: Option<MeanStd>,
}

pub fn summarize(metrics: &[RunMetrics]) -> Vec<VariantSummary> {
    let mut variants: Vec<Variant> = metrics.iter().map(|m| m.variant).collect();
    variants.sort();
    variants.dedup();
    variants
        .into_iter()
        .filter_map(|v| {
            let runs: Vec<&RunMetrics> = metrics.iter().filter(|m| m.variant == v).collect();
            let col = |f: fn(&RunMetrics) -> f64| MeanStd::of(&runs.iter().map(|m| f(m)).collect::<Vec<_>>());
            let gains: Vec<f64> = runs.iter().filter_map(|m| m.dist_gain).collect();
            Some(VariantSummary {
                variant: v,
                runs: runs.len(),
                train_acc: col(|m| m.train_acc)?,
                test_acc: col(|m| m.test_acc)?,
                acc_gap: col(|m| m.acc_gap)?,
                ts_gap: col(|m| m.ts_gap)?,
                dist_gain: MeanStd::of(&gains),
            })
        })
        .collect()
}

pub const CSV_HEADER: [&str; 14] = [
    "variant", "seed", "epoch", "train_acc", "test_acc", "acc_gap", "ts_gap", "dist_gain", "loss_task", "loss_kd",
    "loss_dr", "loss_ar", "loss_qr", "loss_total",
];

/// One CSV row per epoch; the accuracy columns are filled on the final epoch only.
pub fn metrics_csv(metrics: &[RunMetrics]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    let num = |v: f64| format!("{v:.6}");
    for m in metrics {
        for (e, l) in m.epochs.iter().enumerate() {
            let last = e + 1 == m.epochs.len();
            let acc = |v: f64| if last { num(v) } else { String::new() };
            w.write_record([
                m.variant.name().to_string(),
                m.seed.to_string(),
                (e + 1).to_string(),
                acc(m.train_acc),
                acc(m.test_acc),
                acc(m.acc_gap),
                acc(m.ts_gap),
                m.dist_gain.filter(|_| last).map(num).unwrap_or_default(),
                num(l.task),
                num(l.kd),
                num(l.dr),
                num(l.ar),
                num(l.qr),
                num(l.total),
            ])?;
        }
    }
    w.into_inner().map_err(|e| Error::Config(format!("csv buffer: {e}")))
}
