//! Distillation losses with analytic gradients.
//!
//! Every loss takes student quantities first and teacher quantities second,
//! returns its value together with the gradient with respect to the student
//! side, and treats the teacher as constant. Feature batches are slices of
//! flattened per-sample vectors (channel-major, then row-major spatial).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{gaussian_kernel, gaussian_kernel_gradient, kernel_value, kernel_value_and_gradient, GradientMethod, KernelConfig};
use crate::nn::softmax_rows;
use crate::qsim::{l2_norm, EncodingSpec};

/// Unordered or ordered index pair into a feature batch.
pub type Pair = (usize, usize);

/// `(i, j, k)` with `j` the vertex of the angle.
pub type Triplet = (usize, usize, usize);

/// Value of a loss and its gradient with respect to each student row.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub value: f64,
    pub grad: Vec<Vec<f64>>,
}

impl LossGrad {
    fn zeros_like(rows: &[Vec<f64>]) -> Self {
        Self {
            value: 0.0,
            grad: rows.iter().map(|r| vec![0.0; r.len()]).collect(),
        }
    }
}

/// Below this length a difference vector counts as zero.
const DEGENERATE: f64 = 1e-12;

pub fn huber(r: f64, delta: f64) -> f64 {
    let a = r.abs();
    if a <= delta {
        0.5 * r * r
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Derivative of [`huber`] in `r`.
pub fn huber_grad(r: f64, delta: f64) -> f64 {
    r.clamp(-delta, delta)
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta.is_finite()) {
        return Err(Error::validation(format!("huber delta must be positive, got {delta}")));
    }
    Ok(())
}

fn check_batches(student: &[Vec<f64>], teacher: &[Vec<f64>], min: usize) -> Result<()> {
    if student.len() != teacher.len() {
        return Err(Error::shape(format!(
            "student batch of {} vs teacher batch of {}",
            student.len(),
            teacher.len()
        )));
    }
    if student.len() < min {
        return Err(Error::validation(format!("need a batch of at least {min}, got {}", student.len())));
    }
    for (s, t) in student.iter().zip(teacher) {
        if s.len() != t.len() {
            return Err(Error::shape(format!("student row of {} vs teacher row of {}", s.len(), t.len())));
        }
    }
    Ok(())
}

fn check_pairs(pairs: &[Pair], n: usize) -> Result<()> {
    for &(i, j) in pairs {
        let bad = i.max(j);
        if bad >= n {
            return Err(Error::Index {
                what: "batch rows",
                index: bad,
                len: n,
            });
        }
    }
    Ok(())
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    y.iter_mut().zip(x).for_each(|(y, x)| *y += a * x);
}

/// All unordered pairs `i < j` of `n` rows.
pub fn all_pairs(n: usize) -> Vec<Pair> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Every unordered angle of `n` rows once: `i < k`, vertex `j` elsewhere.
pub fn all_triplets(n: usize) -> Vec<Triplet> {
    let mut out = Vec::new();
    for i in 0..n {
        for k in i + 1..n {
            out.extend((0..n).filter(|&j| j != i && j != k).map(|j| (i, j, k)));
        }
    }
    out
}

/// Angles spanned by selected pairs: each non-self pair `(i, k)` with every
/// other row as the vertex.
pub fn triplets_from_pairs(pairs: &[Pair], n: usize) -> Vec<Triplet> {
    let mut out = Vec::new();
    for &(i, k) in pairs.iter().filter(|(i, k)| i != k) {
        out.extend((0..n).filter(|&j| j != i && j != k).map(|j| (i, j, k)));
    }
    out
}

/// Batch-mean `KL(softmax(t / tau) || softmax(s / tau))`.
pub fn kd_loss(student_logits: &[Vec<f64>], teacher_logits: &[Vec<f64>], tau: f64) -> Result<LossGrad> {
    check_batches(student_logits, teacher_logits, 1)?;
    if !(tau > 0.0 && tau.is_finite()) {
        return Err(Error::validation(format!("temperature must be positive, got {tau}")));
    }
    let batch = student_logits.len() as f64;
    let mut out = LossGrad::zeros_like(student_logits);
    for ((s, t), g) in student_logits.iter().zip(teacher_logits).zip(&mut out.grad) {
        let cols = s.len();
        let ss: Vec<f64> = s.iter().map(|v| v / tau).collect();
        let ts: Vec<f64> = t.iter().map(|v| v / tau).collect();
        let ps = softmax_rows(&ss, cols);
        let pt = softmax_rows(&ts, cols);
        let (ls, lt) = (log_sum_exp(&ss), log_sum_exp(&ts));
        let mut kl = 0.0;
        for c in 0..cols {
            if pt[c] > 0.0 {
                kl += pt[c] * ((ts[c] - lt) - (ss[c] - ls));
            }
            g[c] = (ps[c] - pt[c]) / (tau * batch);
        }
        out.value += kl.max(0.0) / batch;
    }
    Ok(out)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Huber loss between student and teacher pairwise distances over all
/// unordered pairs.
pub fn distance_loss(student: &[Vec<f64>], teacher: &[Vec<f64>], delta: f64) -> Result<LossGrad> {
    check_batches(student, teacher, 2)?;
    distance_loss_over(student, teacher, &all_pairs(student.len()), delta, false)
}

/// Distance loss over an explicit pair list. With `normalize`, distances on
/// each side are divided by their mean over the pair list first.
pub fn distance_loss_over(
    student: &[Vec<f64>],
    teacher: &[Vec<f64>],
    pairs: &[Pair],
    delta: f64,
    normalize: bool,
) -> Result<LossGrad> {
    check_batches(student, teacher, 1)?;
    check_delta(delta)?;
    check_pairs(pairs, student.len())?;
    if pairs.is_empty() {
        return Err(Error::validation("empty pair set"));
    }
    let diffs: Vec<Vec<f64>> = pairs.iter().map(|&(i, j)| sub(&student[i], &student[j])).collect();
    let ds: Vec<f64> = diffs.iter().map(|d| l2_norm(d)).collect();
    let dt: Vec<f64> = pairs.iter().map(|&(i, j)| l2_norm(&sub(&teacher[i], &teacher[j]))).collect();
    let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
    let (mu_s, mu_t) = if normalize { (mean(&ds), mean(&dt)) } else { (1.0, 1.0) };
    let scale = |mu: f64| if mu > DEGENERATE { 1.0 / mu } else { 1.0 };
    let (cs, ct) = (scale(mu_s), scale(mu_t));

    let mut out = LossGrad::zeros_like(student);
    let mut a = Vec::with_capacity(pairs.len());
    for (s, t) in ds.iter().zip(&dt) {
        let r = s * cs - t * ct;
        out.value += huber(r, delta);
        a.push(huber_grad(r, delta));
    }
    // dL/dd_s for each pair, including the dependence of the mean.
    let mut dl_dd: Vec<f64> = a.iter().map(|a| a * cs).collect();
    if normalize && mu_s > DEGENERATE {
        let coupling: f64 = a.iter().zip(&ds).map(|(a, d)| a * d).sum::<f64>() * cs * cs / pairs.len() as f64;
        dl_dd.iter_mut().for_each(|g| *g -= coupling);
    }
    for ((&(i, j), diff), (d, g)) in pairs.iter().zip(&diffs).zip(ds.iter().zip(&dl_dd)) {
        if *d <= DEGENERATE || i == j {
            continue;
        }
        axpy(&mut out.grad[i], g / d, diff);
        axpy(&mut out.grad[j], -g / d, diff);
    }
    Ok(out)
}

/// Huber loss between student and teacher angle cosines over every
/// unordered angle of the batch.
pub fn angle_loss(student: &[Vec<f64>], teacher: &[Vec<f64>], delta: f64) -> Result<LossGrad> {
    check_batches(student, teacher, 3)?;
    angle_loss_over(student, teacher, &all_triplets(student.len()), delta)
}

/// Angle loss over an explicit triplet list. Triplets with a zero-length
/// side on either model are skipped.
pub fn angle_loss_over(student: &[Vec<f64>], teacher: &[Vec<f64>], triplets: &[Triplet], delta: f64) -> Result<LossGrad> {
    check_batches(student, teacher, 1)?;
    check_delta(delta)?;
    let mut out = LossGrad::zeros_like(student);
    for &(i, j, k) in triplets {
        let bad = i.max(j).max(k);
        if bad >= student.len() {
            return Err(Error::Index {
                what: "batch rows",
                index: bad,
                len: student.len(),
            });
        }
        let Some(ct) = cosine(&teacher[i], &teacher[j], &teacher[k]) else { continue };
        let Some(cs) = cosine(&student[i], &student[j], &student[k]) else { continue };
        let r = cs.psi - ct.psi;
        out.value += huber(r, delta);
        let a = huber_grad(r, delta);
        if a == 0.0 {
            continue;
        }
        // dpsi/du = (v^ - psi u^) / |u|, and symmetrically for v.
        let du: Vec<f64> = cs.v.iter().zip(&cs.u).map(|(v, u)| (v - cs.psi * u) / cs.nu).collect();
        let dv: Vec<f64> = cs.u.iter().zip(&cs.v).map(|(u, v)| (u - cs.psi * v) / cs.nv).collect();
        axpy(&mut out.grad[i], a, &du);
        axpy(&mut out.grad[k], a, &dv);
        axpy(&mut out.grad[j], -a, &du);
        axpy(&mut out.grad[j], -a, &dv);
    }
    Ok(out)
}

struct Cosine {
    psi: f64,
    u: Vec<f64>,
    v: Vec<f64>,
    nu: f64,
    nv: f64,
}

/// Cosine at vertex `b` with unit sides; `None` when a side has zero length.
fn cosine(a: &[f64], b: &[f64], c: &[f64]) -> Option<Cosine> {
    let mut u = sub(a, b);
    let mut v = sub(c, b);
    let (nu, nv) = (l2_norm(&u), l2_norm(&v));
    if nu <= DEGENERATE || nv <= DEGENERATE {
        return None;
    }
    u.iter_mut().for_each(|x| *x /= nu);
    v.iter_mut().for_each(|x| *x /= nv);
    Some(Cosine {
        psi: dot(&u, &v),
        u,
        v,
        nu,
        nv,
    })
}

/// Huber loss between student and teacher kernel values over `pairs`.
///
/// Quantum kernels encode the flattened features with `spec`. The Gaussian
/// kernel acts on the raw rows, or on unit-normalized rows when
/// `spec.normalize` is set.
pub fn quantum_relational_loss(
    student: &[Vec<f64>],
    teacher: &[Vec<f64>],
    spec: &EncodingSpec,
    kernel: &KernelConfig,
    pairs: &[Pair],
    delta: f64,
    method: GradientMethod,
) -> Result<LossGrad> {
    check_batches(student, teacher, 1)?;
    check_delta(delta)?;
    kernel.validate()?;
    check_pairs(pairs, student.len())?;
    if pairs.is_empty() {
        return Err(Error::validation("empty pair set"));
    }
    let mut out = LossGrad::zeros_like(student);
    for &(i, j) in pairs {
        let (ks, gi, gj, kt) = match *kernel {
            KernelConfig::Gaussian { sigma } => {
                let prep = |x: &[f64]| if spec.normalize { unit(x) } else { x.to_vec() };
                let (si, sj) = (prep(&student[i]), prep(&student[j]));
                let (ks, mut gi, mut gj) = gaussian_kernel_gradient(&si, &sj, sigma)?;
                let kt = gaussian_kernel(&prep(&teacher[i]), &prep(&teacher[j]), sigma)?;
                if spec.normalize {
                    gi = unit_pullback(&student[i], &gi);
                    gj = unit_pullback(&student[j], &gj);
                }
                (ks, gi, gj, kt)
            }
            _ => {
                let (ks, gi, gj) = kernel_value_and_gradient(&student[i], &student[j], spec, kernel.kind(), method)?;
                let kt = kernel_value(&teacher[i], &teacher[j], kernel, spec)?;
                (ks, gi, gj, kt)
            }
        };
        let r = ks - kt;
        out.value += huber(r, delta);
        let a = huber_grad(r, delta);
        axpy(&mut out.grad[i], a, &gi);
        axpy(&mut out.grad[j], a, &gj);
    }
    Ok(out)
}

fn unit(x: &[f64]) -> Vec<f64> {
    let n = l2_norm(x);
    if n > 0.0 {
        x.iter().map(|v| v / n).collect()
    } else {
        x.to_vec()
    }
}

/// Chain rule through `x -> x / |x|`.
fn unit_pullback(x: &[f64], g: &[f64]) -> Vec<f64> {
    let n = l2_norm(x);
    if n == 0.0 {
        return vec![0.0; x.len()];
    }
    let u: Vec<f64> = x.iter().map(|v| v / n).collect();
    let ug = dot(&u, g);
    g.iter().zip(&u).map(|(g, u)| (g - u * ug) / n).collect()
}

/// Weights of the combined objective and the loss hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma_d: f64,
    pub gamma_a: f64,
    pub omega: f64,
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_delta")]
    pub delta: f64,
}

fn default_tau() -> f64 {
    2.0
}

fn default_delta() -> f64 {
    1.0
}

impl Default for LossCoefficients {
    fn default() -> Self {
        Variant::Qrkd.coefficients()
    }
}

impl LossCoefficients {
    pub fn new(alpha: f64, beta: f64, gamma_d: f64, gamma_a: f64, omega: f64) -> Self {
        Self {
            alpha,
            beta,
            gamma_d,
            gamma_a,
            omega,
            tau: default_tau(),
            delta: default_delta(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let weights = [self.alpha, self.beta, self.gamma_d, self.gamma_a, self.omega];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::validation(format!("loss weights must be non-negative: {weights:?}")));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::validation(format!("temperature must be positive, got {}", self.tau)));
        }
        check_delta(self.delta)
    }

    /// True when the objective never looks at the teacher.
    pub fn teacher_free(&self) -> bool {
        self.beta == 0.0 && self.gamma_d == 0.0 && self.gamma_a == 0.0 && self.omega == 0.0
    }
}

/// The seven training configurations compared in the ablation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "scratch")]
    Scratch,
    #[serde(rename = "KD")]
    Kd,
    #[serde(rename = "RKD")]
    Rkd,
    #[serde(rename = "QRKD")]
    Qrkd,
    #[serde(rename = "QRKD-A")]
    QrkdA,
    #[serde(rename = "QRKD-D")]
    QrkdD,
    #[serde(rename = "QRKD-Q")]
    QrkdQ,
}

impl Variant {
    pub const ALL: [Variant; 7] = [
        Variant::Scratch,
        Variant::Kd,
        Variant::Rkd,
        Variant::Qrkd,
        Variant::QrkdA,
        Variant::QrkdD,
        Variant::QrkdQ,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Scratch => "scratch",
            Variant::Kd => "KD",
            Variant::Rkd => "RKD",
            Variant::Qrkd => "QRKD",
            Variant::QrkdA => "QRKD-A",
            Variant::QrkdD => "QRKD-D",
            Variant::QrkdQ => "QRKD-Q",
        }
    }

    /// `(alpha, beta, gamma_d, gamma_a, omega)` with default tau and delta.
    pub fn coefficients(self) -> LossCoefficients {
        let (a, b, d, g, w) = match self {
            Variant::Scratch => (1.0, 0.0, 0.0, 0.0, 0.0),
            Variant::Kd => (0.5, 0.5, 0.0, 0.0, 0.0),
            Variant::Rkd => (0.5, 0.5, 0.1, 0.1, 0.0),
            Variant::Qrkd => (0.5, 0.5, 0.1, 0.1, 0.1),
            Variant::QrkdA => (0.5, 0.5, 0.0, 0.1, 0.0),
            Variant::QrkdD => (0.5, 0.5, 0.1, 0.0, 0.0),
            Variant::QrkdQ => (0.5, 0.5, 0.0, 0.0, 0.1),
        };
        LossCoefficients::new(a, b, d, g, w)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<&str> = Variant::ALL.iter().map(|v| v.name()).collect();
                Error::InvalidArgument(format!("unknown variant {s:?}; valid: {}", names.join(", ")))
            })
    }
}

/// Unweighted component values on one batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossComponents {
    pub task: f64,
    pub kd: f64,
    pub dr: f64,
    pub ar: f64,
    pub qr: f64,
}

/// Components plus their weighted total.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub task: f64,
    pub kd: f64,
    pub dr: f64,
    pub ar: f64,
    pub qr: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Elementwise sum, for epoch averages.
    pub fn accumulate(&mut self, other: &LossBreakdown) {
        self.task += other.task;
        self.kd += other.kd;
        self.dr += other.dr;
        self.ar += other.ar;
        self.qr += other.qr;
        self.total += other.total;
    }

    pub fn scaled(&self, factor: f64) -> LossBreakdown {
        LossBreakdown {
            task: self.task * factor,
            kd: self.kd * factor,
            dr: self.dr * factor,
            ar: self.ar * factor,
            qr: self.qr * factor,
            total: self.total * factor,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.task, self.kd, self.dr, self.ar, self.qr, self.total]
            .iter()
            .all(|v| v.is_finite())
    }
}

/// Weighted sum `alpha task + beta kd + gamma_d dr + gamma_a ar + omega qr`.
pub fn total_loss(c: &LossComponents, coefficients: &LossCoefficients) -> Result<LossBreakdown> {
    coefficients.validate()?;
    let k = coefficients;
    Ok(LossBreakdown {
        task: c.task,
        kd: c.kd,
        dr: c.dr,
        ar: c.ar,
        qr: c.qr,
        total: k.alpha * c.task + k.beta * c.kd + k.gamma_d * c.dr + k.gamma_a * c.ar + k.omega * c.qr,
    })
}
