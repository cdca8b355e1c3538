//! Pairwise kernels on encoded features.
//!
//! Two quantum kernels are provided: the fidelity kernel
//! `|<phi(x_i)|phi(x_j)>|^2` and the projected kernel
//! `tr[rho_0(x_i) rho_0(x_j)]` on the one-qubit reduced state of qubit 0.
//! The Gaussian RBF kernel serves as the classical baseline.
//!
//! Gradients of the quantum kernels with respect to the raw features come
//! from the parameter-shift rule; an adjoint statevector sweep computes the
//! same numbers in one pass and is what training uses.

use std::f64::consts::FRAC_PI_2;

use num_complex::Complex64;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::qsim::{self, encode_angles, pauli_expectations, EncodingSpec, PauliExpectations, StateVector};
use crate::rng;

/// Slack allowed when checking the projection triangle bound in floating point.
pub const BOUND_TOL: f64 = 1e-12;

/// Kernel used for relational alignment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelConfig {
    Fidelity,
    Projected,
    Gaussian { sigma: f64 },
}

impl KernelConfig {
    pub fn kind(&self) -> KernelKind {
        match self {
            KernelConfig::Fidelity => KernelKind::Fidelity,
            KernelConfig::Projected => KernelKind::Projected,
            KernelConfig::Gaussian { .. } => KernelKind::Gaussian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let KernelConfig::Gaussian { sigma } = self {
            check_sigma(*sigma)?;
        }
        Ok(())
    }
}

/// Tag stored with a [`KernelMatrix`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Fidelity,
    Projected,
    Gaussian,
    ProjectedFidelityJl,
}

impl std::fmt::Display for KernelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            KernelKind::Fidelity => "fidelity",
            KernelKind::Projected => "projected",
            KernelKind::Gaussian => "gaussian",
            KernelKind::ProjectedFidelityJl => "projected_fidelity_jl",
        };
        f.write_str(name)
    }
}

fn check_sigma(sigma: f64) -> Result<()> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::validation(format!("sigma must be positive, got {sigma}")));
    }
    Ok(())
}

fn fidelity_of(a: &StateVector, b: &StateVector) -> Result<f64> {
    Ok(qsim::inner_product(a, b)?.norm_sqr())
}

fn projected_of(a: &StateVector, b: &StateVector) -> Result<f64> {
    let pa = pauli_expectations(a, 0)?;
    let pb = pauli_expectations(b, 0)?;
    Ok(0.5 * (1.0 + pa.dot(&pb)))
}

/// `|<phi(x_i)|phi(x_j)>|^2`.
pub fn fidelity_kernel(x_i: &[f64], x_j: &[f64], spec: &EncodingSpec) -> Result<f64> {
    let a = qsim::encode_features(x_i, spec)?;
    let b = qsim::encode_features(x_j, spec)?;
    fidelity_of(&a, &b)
}

/// `tr[rho_0(x_i) rho_0(x_j)]` through the Pauli decomposition
/// `(1 + x_i x_j + y_i y_j + z_i z_j) / 2`.
pub fn projected_kernel(x_i: &[f64], x_j: &[f64], spec: &EncodingSpec) -> Result<f64> {
    let a = qsim::encode_features(x_i, spec)?;
    let b = qsim::encode_features(x_j, spec)?;
    projected_of(&a, &b)
}

/// Projected kernel as an explicit 2x2 matrix trace of the reduced states.
pub fn projected_kernel_trace(x_i: &[f64], x_j: &[f64], spec: &EncodingSpec) -> Result<f64> {
    let a = qsim::encode_features(x_i, spec)?;
    let b = qsim::encode_features(x_j, spec)?;
    let ra = qsim::reduced_density_matrix(&a, 0)?;
    let rb = qsim::reduced_density_matrix(&b, 0)?;
    Ok(ra.trace_product(&rb).re)
}

/// `exp(-|x_i - x_j|^2 / (2 sigma^2))`.
pub fn gaussian_kernel(x_i: &[f64], x_j: &[f64], sigma: f64) -> Result<f64> {
    check_sigma(sigma)?;
    if x_i.len() != x_j.len() {
        return Err(Error::shape(format!(
            "gaussian kernel on vectors of length {} and {}",
            x_i.len(),
            x_j.len()
        )));
    }
    let d2: f64 = x_i.iter().zip(x_j).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((-d2 / (2.0 * sigma * sigma)).exp())
}

/// Gradient of the Gaussian kernel with respect to both arguments.
pub fn gaussian_kernel_gradient(x_i: &[f64], x_j: &[f64], sigma: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let k = gaussian_kernel(x_i, x_j, sigma)?;
    let s2 = sigma * sigma;
    let gi: Vec<f64> = x_i.iter().zip(x_j).map(|(a, b)| -k * (a - b) / s2).collect();
    let gj = gi.iter().map(|g| -g).collect();
    Ok((k, gi, gj))
}

/// Evaluates one kernel on a pair of raw feature vectors.
pub fn kernel_value(x_i: &[f64], x_j: &[f64], kernel: &KernelConfig, spec: &EncodingSpec) -> Result<f64> {
    match kernel {
        KernelConfig::Fidelity => fidelity_kernel(x_i, x_j, spec),
        KernelConfig::Projected => projected_kernel(x_i, x_j, spec),
        KernelConfig::Gaussian { sigma } => gaussian_kernel(x_i, x_j, *sigma),
    }
}

/// Symmetric matrix of pairwise kernel values.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelMatrix {
    size: usize,
    values: Vec<f64>,
    pub kind: KernelKind,
}

impl KernelMatrix {
    fn build(size: usize, kind: KernelKind, mut entry: impl FnMut(usize, usize) -> Result<f64>) -> Result<Self> {
        if size < 2 {
            return Err(Error::validation(format!(
                "a kernel matrix needs at least 2 samples, got {size}"
            )));
        }
        let mut values = vec![0.0; size * size];
        for i in 0..size {
            for j in i..size {
                let v = entry(i, j)?;
                values[i * size + j] = v;
                values[j * size + i] = v;
            }
        }
        Ok(Self { size, values, kind })
    }

    /// Wraps precomputed values; the matrix must be square and symmetric.
    pub fn from_rows(rows: &[Vec<f64>], kind: KernelKind) -> Result<Self> {
        let size = rows.len();
        if rows.iter().any(|r| r.len() != size) {
            return Err(Error::shape("kernel matrix rows must be square"));
        }
        Self::build(size, kind, |i, j| {
            if rows[i][j] != rows[j][i] {
                return Err(Error::validation(format!("entries ({i},{j}) and ({j},{i}) differ")));
            }
            Ok(rows[i][j])
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }

    /// Strict upper-triangle entries in row-major order.
    pub fn upper_triangle(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.size).flat_map(move |i| (i + 1..self.size).map(move |j| self.get(i, j)))
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.values.chunks(self.size).map(<[f64]>::to_vec).collect()
    }
}

/// Kernel matrix over `samples`, encoding each sample once and evaluating
/// every unordered pair once.
pub fn kernel_matrix(samples: &[Vec<f64>], kernel: &KernelConfig, spec: &EncodingSpec) -> Result<KernelMatrix> {
    if samples.len() < 2 {
        return Err(Error::validation(format!(
            "a kernel matrix needs at least 2 samples, got {}",
            samples.len()
        )));
    }
    match kernel {
        KernelConfig::Gaussian { sigma } => {
            check_sigma(*sigma)?;
            KernelMatrix::build(samples.len(), KernelKind::Gaussian, |i, j| {
                gaussian_kernel(&samples[i], &samples[j], *sigma)
            })
        }
        KernelConfig::Fidelity => {
            let states = encode_all(samples, spec)?;
            KernelMatrix::build(samples.len(), KernelKind::Fidelity, |i, j| {
                fidelity_of(&states[i], &states[j])
            })
        }
        KernelConfig::Projected => {
            let blochs = encode_all(samples, spec)?
                .iter()
                .map(|s| pauli_expectations(s, 0))
                .collect::<Result<Vec<_>>>()?;
            KernelMatrix::build(samples.len(), KernelKind::Projected, |i, j| {
                Ok(0.5 * (1.0 + blochs[i].dot(&blochs[j])))
            })
        }
    }
}

/// Fidelity kernel evaluated on random-projected states.
pub fn kernel_matrix_jl(samples: &[Vec<f64>], spec: &EncodingSpec, projector: &JLProjector) -> Result<KernelMatrix> {
    let states = encode_all(samples, spec)?;
    let images = states
        .iter()
        .map(|s| jl_project(s, projector))
        .collect::<Result<Vec<_>>>()?;
    KernelMatrix::build(samples.len(), KernelKind::ProjectedFidelityJl, |i, j| {
        Ok(overlap(&images[i], &images[j]).norm_sqr())
    })
}

fn encode_all(samples: &[Vec<f64>], spec: &EncodingSpec) -> Result<Vec<StateVector>> {
    samples.iter().map(|x| qsim::encode_features(x, spec)).collect()
}

fn overlap(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// How quantum-kernel gradients are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMethod {
    /// Two shifted circuit evaluations per angle.
    #[default]
    ParameterShift,
    /// One reverse sweep over the circuit per argument.
    Adjoint,
}

/// Gradient of a quantum kernel with respect to both raw feature vectors,
/// by the parameter-shift rule.
pub fn kernel_gradient(
    x_i: &[f64],
    x_j: &[f64],
    spec: &EncodingSpec,
    kind: KernelKind,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (_, gi, gj) = kernel_value_and_gradient(x_i, x_j, spec, kind, GradientMethod::ParameterShift)?;
    Ok((gi, gj))
}

/// Kernel value and its gradient with respect to both raw feature vectors.
pub fn kernel_value_and_gradient(
    x_i: &[f64],
    x_j: &[f64],
    spec: &EncodingSpec,
    kind: KernelKind,
    method: GradientMethod,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    if !matches!(kind, KernelKind::Fidelity | KernelKind::Projected) {
        return Err(Error::validation(format!(
            "no circuit gradient for the {kind} kernel"
        )));
    }
    let angles_i = spec.angles(x_i)?;
    let angles_j = spec.angles(x_j)?;
    let n = spec.n_qubits;
    let state_i = encode_angles(&angles_i, n)?;
    let state_j = encode_angles(&angles_j, n)?;

    let (value, gi, gj) = match kind {
        KernelKind::Fidelity => {
            let value = fidelity_of(&state_i, &state_j)?;
            let gi = fidelity_angle_grad(&angles_i, &state_i, &state_j, n, method)?;
            let gj = fidelity_angle_grad(&angles_j, &state_j, &state_i, n, method)?;
            (value, gi, gj)
        }
        _ => {
            let bloch_i = pauli_expectations(&state_i, 0)?;
            let bloch_j = pauli_expectations(&state_j, 0)?;
            let value = 0.5 * (1.0 + bloch_i.dot(&bloch_j));
            let gi = projected_angle_grad(&angles_i, &state_i, &bloch_j, n, method)?;
            let gj = projected_angle_grad(&angles_j, &state_j, &bloch_i, n, method)?;
            (value, gi, gj)
        }
    };
    Ok((value, spec.pullback(x_i, &gi), spec.pullback(x_j, &gj)))
}

fn shifted(angles: &[f64], m: usize, delta: f64) -> Vec<f64> {
    let mut a = angles.to_vec();
    a[m] += delta;
    a
}

/// d/d(angles) of |<psi(angles)|other>|^2.
fn fidelity_angle_grad(
    angles: &[f64],
    state: &StateVector,
    other: &StateVector,
    n: usize,
    method: GradientMethod,
) -> Result<Vec<f64>> {
    match method {
        GradientMethod::ParameterShift => (0..angles.len())
            .map(|m| {
                let plus = encode_angles(&shifted(angles, m, FRAC_PI_2), n)?;
                let minus = encode_angles(&shifted(angles, m, -FRAC_PI_2), n)?;
                Ok(0.5 * (fidelity_of(&plus, other)? - fidelity_of(&minus, other)?))
            })
            .collect(),
        GradientMethod::Adjoint => {
            // M = |other><other|, so M|psi> = other * <other|psi>.
            let amp = qsim::inner_product(other, state)?;
            let m_psi = other.amplitudes().iter().map(|a| a * amp).collect();
            Ok(adjoint_sweep(angles, state, m_psi, n))
        }
    }
}

/// d/d(angles) of (1 + r(angles) . other) / 2 with r the qubit-0 Bloch vector.
fn projected_angle_grad(
    angles: &[f64],
    state: &StateVector,
    other: &PauliExpectations,
    n: usize,
    method: GradientMethod,
) -> Result<Vec<f64>> {
    match method {
        GradientMethod::ParameterShift => (0..angles.len())
            .map(|m| {
                let plus = pauli_expectations(&encode_angles(&shifted(angles, m, FRAC_PI_2), n)?, 0)?;
                let minus = pauli_expectations(&encode_angles(&shifted(angles, m, -FRAC_PI_2), n)?, 0)?;
                // Shift rule per Pauli expectation, then the product rule.
                let d = [
                    0.5 * (plus.x - minus.x),
                    0.5 * (plus.y - minus.y),
                    0.5 * (plus.z - minus.z),
                ];
                Ok(0.5 * (d[0] * other.x + d[1] * other.y + d[2] * other.z))
            })
            .collect(),
        GradientMethod::Adjoint => {
            // M = (r_x X + r_y Y + r_z Z) / 2 on qubit 0, dropping the
            // constant term of the kernel.
            let amps = state.amplitudes();
            let dim = amps.len();
            let mask = dim >> 1;
            let mut m_psi = vec![Complex64::new(0.0, 0.0); dim];
            for (i, out) in m_psi.iter_mut().enumerate() {
                let partner = amps[i ^ mask];
                let (y_part, z_sign) = if i & mask == 0 {
                    (Complex64::new(0.0, -1.0) * partner, 1.0)
                } else {
                    (Complex64::new(0.0, 1.0) * partner, -1.0)
                };
                *out = 0.5 * (partner * other.x + y_part * other.y + amps[i] * (z_sign * other.z));
            }
            Ok(adjoint_sweep(angles, state, m_psi, n))
        }
    }
}

fn ry(angle: f64) -> [[f64; 2]; 2] {
    let (s, c) = (0.5 * angle).sin_cos();
    [[c, -s], [s, c]]
}

/// `<bra| (I x .. x m_q x .. x I) |ket>`.
fn matrix_element(bra: &StateVector, ket: &StateVector, qubit: usize, m: [[f64; 2]; 2]) -> Complex64 {
    let n = ket.n_qubits();
    let mask = 1usize << (n - 1 - qubit);
    let (b, k) = (bra.amplitudes(), ket.amplitudes());
    let mut acc = Complex64::new(0.0, 0.0);
    for i0 in (0..k.len()).filter(|i| i & mask == 0) {
        let i1 = i0 | mask;
        acc += b[i0].conj() * (k[i0] * m[0][0] + k[i1] * m[0][1]);
        acc += b[i1].conj() * (k[i0] * m[1][0] + k[i1] * m[1][1]);
    }
    acc
}

/// Reverse sweep for `d <psi|M|psi> / d angle_m = 2 Re <psi|M dpsi/dangle_m>`
/// given `m_psi = M|psi>`.
fn adjoint_sweep(angles: &[f64], state: &StateVector, m_psi: Vec<Complex64>, n: usize) -> Vec<f64> {
    let mut phi = state.clone();
    phi.cnot_chain_in_place(true);
    let mut lam = StateVector::from_raw(m_psi, n);
    lam.cnot_chain_in_place(true);
    let mut grad = vec![0.0; angles.len()];
    for m in (0..angles.len()).rev() {
        let q = m % n;
        let theta = angles[m];
        phi.apply_real_2x2(q, ry(-theta));
        // dRy(t)/dt = Ry(t + pi) / 2
        let d = ry(theta + std::f64::consts::PI);
        let deriv = [[0.5 * d[0][0], 0.5 * d[0][1]], [0.5 * d[1][0], 0.5 * d[1][1]]];
        grad[m] = 2.0 * matrix_element(&lam, &phi, q, deriv).re;
        lam.apply_real_2x2(q, ry(-theta));
    }
    grad
}

/// Gaussian random projection `P = A / sqrt(k)` with `A_ij ~ N(0, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct JLProjector {
    matrix: Vec<f64>,
    pub seed: Option<u64>,
    pub target_dim: usize,
    pub source_dim: usize,
    /// Rescale projected vectors to unit norm before taking overlaps.
    pub renormalize: bool,
}

impl JLProjector {
    pub fn new(target_dim: usize, source_dim: usize, seed: u64) -> Result<Self> {
        if target_dim == 0 || target_dim > source_dim {
            return Err(Error::shape(format!(
                "target dimension {target_dim} must be in 1..={source_dim}"
            )));
        }
        let mut rng = rng::substream(seed, rng::Stream::Projection);
        let scale = 1.0 / (target_dim as f64).sqrt();
        let matrix = (0..target_dim * source_dim)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                z * scale
            })
            .collect();
        Ok(Self {
            matrix,
            seed: Some(seed),
            target_dim,
            source_dim,
            renormalize: false,
        })
    }

    /// Identity map on `dim` coordinates.
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        (0..dim).for_each(|i| matrix[i * dim + i] = 1.0);
        Self {
            matrix,
            seed: None,
            target_dim: dim,
            source_dim: dim,
            renormalize: false,
        }
    }

    pub fn with_renormalize(mut self, renormalize: bool) -> Self {
        self.renormalize = renormalize;
        self
    }

    pub fn entry(&self, row: usize, col: usize) -> f64 {
        self.matrix[row * self.source_dim + col]
    }

    /// `P * v` for a complex vector of length `source_dim`.
    pub fn project_amplitudes(&self, v: &[Complex64]) -> Result<Vec<Complex64>> {
        if v.len() != self.source_dim {
            return Err(Error::shape(format!(
                "projector expects dimension {}, got {}",
                self.source_dim,
                v.len()
            )));
        }
        let mut out: Vec<Complex64> = self
            .matrix
            .chunks(self.source_dim)
            .map(|row| {
                let (mut re, mut im) = (0.0, 0.0);
                for (p, a) in row.iter().zip(v) {
                    re += p * a.re;
                    im += p * a.im;
                }
                Complex64::new(re, im)
            })
            .collect();
        if self.renormalize {
            let norm = out.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
            if norm > 0.0 {
                out.iter_mut().for_each(|a| *a /= norm);
            }
        }
        Ok(out)
    }
}

/// Projects the amplitudes of `state`; no renormalization unless the
/// projector asks for it.
pub fn jl_project(state: &StateVector, projector: &JLProjector) -> Result<Vec<Complex64>> {
    projector.project_amplitudes(state.amplitudes())
}

/// Exact and projected fidelity kernels over every unordered pair.
#[derive(Debug, Clone)]
pub struct ProjectionComparison {
    pub pairs: Vec<(usize, usize)>,
    pub exact: Vec<f64>,
    pub projected: Vec<f64>,
}

impl ProjectionComparison {
    /// Largest `|K_ij - K_ij^proj|` over the pairs.
    pub fn max_error(&self) -> f64 {
        self.exact
            .iter()
            .zip(&self.projected)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

pub fn compare_projection(samples: &[Vec<f64>], spec: &EncodingSpec, projector: &JLProjector) -> Result<ProjectionComparison> {
    if samples.len() < 2 {
        return Err(Error::validation("projection error needs at least 2 samples"));
    }
    let states = encode_all(samples, spec)?;
    let images = states
        .iter()
        .map(|s| jl_project(s, projector))
        .collect::<Result<Vec<_>>>()?;
    let mut cmp = ProjectionComparison {
        pairs: Vec::new(),
        exact: Vec::new(),
        projected: Vec::new(),
    };
    for i in 0..samples.len() {
        for j in i + 1..samples.len() {
            cmp.pairs.push((i, j));
            cmp.exact.push(fidelity_of(&states[i], &states[j])?);
            cmp.projected.push(overlap(&images[i], &images[j]).norm_sqr());
        }
    }
    Ok(cmp)
}

/// Empirical projection error: the largest kernel deviation over all
/// unordered sample pairs.
pub fn projection_error(samples: &[Vec<f64>], spec: &EncodingSpec, projector: &JLProjector) -> Result<f64> {
    Ok(compare_projection(samples, spec, projector)?.max_error())
}

/// Result of checking `|K^s - K^t| <= |K^s,proj - K^t,proj| + 2 eps` pairwise.
#[derive(Debug, Clone)]
pub struct BoundReport {
    pub pairs: Vec<(usize, usize)>,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// `rhs - lhs` per pair.
    pub slack: Vec<f64>,
    pub eps_student: f64,
    pub eps_teacher: f64,
    pub passed: bool,
}

impl BoundReport {
    pub fn min_slack(&self) -> f64 {
        self.slack.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn bound_check(
    student: &[Vec<f64>],
    teacher: &[Vec<f64>],
    spec: &EncodingSpec,
    projector: &JLProjector,
) -> Result<BoundReport> {
    if student.len() != teacher.len() {
        return Err(Error::validation(format!(
            "{} student samples vs {} teacher samples",
            student.len(),
            teacher.len()
        )));
    }
    let s = compare_projection(student, spec, projector)?;
    let t = compare_projection(teacher, spec, projector)?;
    let eps_student = s.max_error();
    let eps_teacher = t.max_error();
    let eps = eps_student.max(eps_teacher);
    let lhs: Vec<f64> = s.exact.iter().zip(&t.exact).map(|(a, b)| (a - b).abs()).collect();
    let rhs: Vec<f64> = s
        .projected
        .iter()
        .zip(&t.projected)
        .map(|(a, b)| (a - b).abs() + 2.0 * eps)
        .collect();
    let slack: Vec<f64> = rhs.iter().zip(&lhs).map(|(r, l)| r - l).collect();
    let passed = slack.iter().all(|s| *s >= -BOUND_TOL);
    Ok(BoundReport {
        pairs: s.pairs,
        lhs,
        rhs,
        slack,
        eps_student,
        eps_teacher,
        passed,
    })
}

/// Mean and population variance of a kernel matrix's strict upper triangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KernelStats {
    pub mean: f64,
    pub variance: f64,
    pub n_pairs: usize,
}

pub fn offdiag_variance(matrix: &KernelMatrix) -> Result<KernelStats> {
    if matrix.size() < 2 {
        return Err(Error::validation("variance needs a matrix of at least 2x2"));
    }
    let values: Vec<f64> = matrix.upper_triangle().collect();
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let variance = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    Ok(KernelStats {
        mean,
        variance,
        n_pairs: values.len(),
    })
}
