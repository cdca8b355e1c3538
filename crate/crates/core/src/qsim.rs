//! Dense statevector simulation of the angle-encoding circuit.
//!
//! Basis convention: qubit 0 is the most significant bit of the basis index,
//! so for two qubits the amplitudes are ordered `|00>, |01>, |10>, |11>` with
//! the left label belonging to qubit 0.
//!
//! The encoding circuit applies, for every layer `l` and qubit `j`, the
//! rotation `Ry(x[l * n + j])` and then a single CNOT chain
//! `CNOT(0 -> 1), CNOT(1 -> 2), ...` after all rotation layers.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest register the dense simulator accepts.
pub const MAX_QUBITS: usize = 20;

/// Tolerance for state-level identities.
pub const STATE_TOL: f64 = 1e-10;

const ZERO: Complex64 = Complex64::new(0.0, 0.0);
const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Pure state of `n_qubits` qubits as `2^n` complex amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    amplitudes: Vec<Complex64>,
    n_qubits: usize,
}

fn check_qubit_count(n_qubits: usize) -> Result<()> {
    if n_qubits == 0 {
        return Err(Error::InvalidArgument("a register needs at least one qubit".into()));
    }
    if n_qubits > MAX_QUBITS {
        return Err(Error::Capacity(format!(
            "{n_qubits} qubits requested, dense simulation is capped at {MAX_QUBITS}"
        )));
    }
    Ok(())
}

impl StateVector {
    /// The all-zero basis state `|0...0>`.
    pub fn zero_state(n_qubits: usize) -> Result<Self> {
        check_qubit_count(n_qubits)?;
        let mut amplitudes = vec![ZERO; 1 << n_qubits];
        amplitudes[0] = ONE;
        Ok(Self {
            amplitudes,
            n_qubits,
        })
    }

    /// Computational basis state `|index>`.
    pub fn basis_state(n_qubits: usize, index: usize) -> Result<Self> {
        check_qubit_count(n_qubits)?;
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(Error::Index {
                what: "basis states",
                index,
                len: dim,
            });
        }
        let mut amplitudes = vec![ZERO; dim];
        amplitudes[index] = ONE;
        Ok(Self {
            amplitudes,
            n_qubits,
        })
    }

    /// Wraps explicit amplitudes. The length must be a power of two and the
    /// vector must be normalized within [`STATE_TOL`].
    pub fn from_amplitudes(amplitudes: Vec<Complex64>) -> Result<Self> {
        let dim = amplitudes.len();
        if dim < 2 || !dim.is_power_of_two() {
            return Err(Error::shape(format!(
                "amplitude count {dim} is not a power of two >= 2"
            )));
        }
        let n_qubits = dim.trailing_zeros() as usize;
        check_qubit_count(n_qubits)?;
        let norm: f64 = amplitudes.iter().map(|a| a.norm_sqr()).sum();
        if (norm - 1.0).abs() > STATE_TOL {
            return Err(Error::validation(format!(
                "state is not normalized (squared norm {norm})"
            )));
        }
        Ok(Self {
            amplitudes,
            n_qubits,
        })
    }

    /// Unchecked constructor for intermediate (possibly unnormalized)
    /// vectors such as adjoint cotangents.
    pub(crate) fn from_raw(amplitudes: Vec<Complex64>, n_qubits: usize) -> Self {
        debug_assert_eq!(amplitudes.len(), 1 << n_qubits);
        Self {
            amplitudes,
            n_qubits,
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amplitudes
    }

    /// `sum |a_i|^2`.
    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum()
    }

    fn check_qubit(&self, qubit: usize) -> Result<()> {
        if qubit >= self.n_qubits {
            return Err(Error::Index {
                what: "qubits",
                index: qubit,
                len: self.n_qubits,
            });
        }
        Ok(())
    }

    fn mask(&self, qubit: usize) -> usize {
        1 << (self.n_qubits - 1 - qubit)
    }

    /// Returns a new state with `Ry(angle)` applied on `qubit`.
    pub fn apply_ry(&self, qubit: usize, angle: f64) -> Result<Self> {
        let mut out = self.clone();
        out.ry_in_place(qubit, angle)?;
        Ok(out)
    }

    /// Returns a new state with `CNOT(control -> target)` applied.
    pub fn apply_cnot(&self, control: usize, target: usize) -> Result<Self> {
        let mut out = self.clone();
        out.cnot_in_place(control, target)?;
        Ok(out)
    }

    pub(crate) fn ry_in_place(&mut self, qubit: usize, angle: f64) -> Result<()> {
        self.check_qubit(qubit)?;
        let (s, c) = (angle * 0.5).sin_cos();
        self.apply_real_2x2(qubit, [[c, -s], [s, c]]);
        Ok(())
    }

    /// Applies a real single-qubit matrix without validation.
    pub(crate) fn apply_real_2x2(&mut self, qubit: usize, m: [[f64; 2]; 2]) {
        let mask = self.mask(qubit);
        let dim = self.amplitudes.len();
        // Blocks of `mask` indices with the qubit bit clear, followed by the
        // matching block with the bit set.
        let mut base = 0;
        while base < dim {
            for i0 in base..base + mask {
                let i1 = i0 | mask;
                let a0 = self.amplitudes[i0];
                let a1 = self.amplitudes[i1];
                self.amplitudes[i0] = a0 * m[0][0] + a1 * m[0][1];
                self.amplitudes[i1] = a0 * m[1][0] + a1 * m[1][1];
            }
            base += mask << 1;
        }
    }

    pub(crate) fn cnot_in_place(&mut self, control: usize, target: usize) -> Result<()> {
        self.check_qubit(control)?;
        self.check_qubit(target)?;
        if control == target {
            return Err(Error::InvalidArgument(format!(
                "CNOT control and target are both qubit {control}"
            )));
        }
        let cmask = self.mask(control);
        let tmask = self.mask(target);
        for i in 0..self.amplitudes.len() {
            if i & cmask != 0 && i & tmask == 0 {
                self.amplitudes.swap(i, i | tmask);
            }
        }
        Ok(())
    }

    /// Applies the encoder's CNOT chain, or its inverse when `inverse`.
    pub(crate) fn cnot_chain_in_place(&mut self, inverse: bool) {
        let n = self.n_qubits;
        if n < 2 {
            return;
        }
        let mut apply = |k: usize| {
            self.cnot_in_place(k, k + 1)
                .expect("chain indices are in range and distinct");
        };
        if inverse {
            (0..n - 1).rev().for_each(&mut apply);
        } else {
            (0..n - 1).for_each(&mut apply);
        }
    }
}

/// How raw features are padded before encoding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PadPolicy {
    /// Fill missing angles with zero (identity rotations).
    #[default]
    Zero,
}

/// Shape of the encoding circuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingSpec {
    pub n_qubits: usize,
    pub n_layers: usize,
    /// L2-normalize the padded features before encoding.
    pub normalize: bool,
    /// Angle scale applied after normalization, in radians.
    pub norm_scale: f64,
    #[serde(default)]
    pub pad_policy: PadPolicy,
}

impl EncodingSpec {
    /// Raw angles: no normalization.
    pub fn raw(n_qubits: usize, n_layers: usize) -> Self {
        Self {
            n_qubits,
            n_layers,
            normalize: false,
            norm_scale: std::f64::consts::PI,
            pad_policy: PadPolicy::Zero,
        }
    }

    /// Normalized features scaled by `pi`.
    pub fn normalized(n_qubits: usize, n_layers: usize) -> Self {
        Self {
            normalize: true,
            ..Self::raw(n_qubits, n_layers)
        }
    }

    /// Smallest spec with `n_qubits` that fits `feature_dim` values.
    pub fn fitting(n_qubits: usize, feature_dim: usize, normalize: bool) -> Self {
        let n_layers = feature_dim.div_ceil(n_qubits.max(1)).max(1);
        Self {
            normalize,
            ..Self::raw(n_qubits, n_layers)
        }
    }

    /// Number of rotation angles, `n_qubits * n_layers`.
    pub fn capacity(&self) -> usize {
        self.n_qubits * self.n_layers
    }

    pub fn validate(&self) -> Result<()> {
        check_qubit_count(self.n_qubits)?;
        if self.n_layers == 0 {
            return Err(Error::InvalidArgument("encoding needs at least one layer".into()));
        }
        if self.normalize && !(self.norm_scale > 0.0 && self.norm_scale.is_finite()) {
            return Err(Error::validation(format!(
                "norm_scale must be positive, got {}",
                self.norm_scale
            )));
        }
        Ok(())
    }

    /// The rotation angles the circuit applies, padded to
    /// [`capacity`](Self::capacity). Angle `l * n_qubits + j` drives qubit `j`
    /// in layer `l`.
    pub fn angles(&self, features: &[f64]) -> Result<Vec<f64>> {
        self.validate()?;
        let capacity = self.capacity();
        if features.len() > capacity {
            return Err(Error::Capacity(format!(
                "{} features exceed the {} rotations of {} qubits x {} layers",
                features.len(),
                capacity,
                self.n_qubits,
                self.n_layers
            )));
        }
        if let Some(pos) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "feature {pos} is not finite ({})",
                features[pos]
            )));
        }
        let mut angles = features.to_vec();
        angles.resize(capacity, 0.0);
        if self.normalize {
            let norm = l2_norm(&angles);
            // A zero vector has no direction; it encodes as |0...0>.
            if norm > 0.0 {
                let scale = self.norm_scale / norm;
                angles.iter_mut().for_each(|a| *a *= scale);
            }
        }
        Ok(angles)
    }

    /// Pulls a gradient with respect to the encoded angles back to the raw
    /// features (chain rule through padding, normalization and scaling).
    pub fn pullback(&self, features: &[f64], angle_grad: &[f64]) -> Vec<f64> {
        let d = features.len();
        if !self.normalize {
            return angle_grad[..d].to_vec();
        }
        let norm = l2_norm(features);
        if norm == 0.0 {
            return vec![0.0; d];
        }
        // d(s x/|x|)/dx = s/|x| (I - x x^T/|x|^2)
        let proj: f64 = features
            .iter()
            .zip(angle_grad)
            .map(|(x, g)| x * g)
            .sum::<f64>()
            / (norm * norm);
        let scale = self.norm_scale / norm;
        features
            .iter()
            .zip(angle_grad)
            .map(|(x, g)| scale * (g - x * proj))
            .collect()
    }
}

pub(crate) fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Prepares the encoder state from already computed angles.
pub(crate) fn encode_angles(angles: &[f64], n_qubits: usize) -> Result<StateVector> {
    let mut state = StateVector::zero_state(n_qubits)?;
    for (m, &angle) in angles.iter().enumerate() {
        if angle != 0.0 {
            state.ry_in_place(m % n_qubits, angle)?;
        }
    }
    state.cnot_chain_in_place(false);
    Ok(state)
}

/// Encodes `features` with the layered `Ry` circuit followed by the CNOT chain.
pub fn encode_features(features: &[f64], spec: &EncodingSpec) -> Result<StateVector> {
    let angles = spec.angles(features)?;
    encode_angles(&angles, spec.n_qubits)
}

/// `<a|b> = sum conj(a_i) b_i`.
pub fn inner_product(a: &StateVector, b: &StateVector) -> Result<Complex64> {
    if a.dim() != b.dim() {
        return Err(Error::shape(format!(
            "inner product of {}- and {}-dimensional states",
            a.dim(),
            b.dim()
        )));
    }
    Ok(a.amplitudes
        .iter()
        .zip(&b.amplitudes)
        .map(|(x, y)| x.conj() * y)
        .sum())
}

/// One-qubit density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedDensityMatrix {
    pub entries: [[Complex64; 2]; 2],
}

impl ReducedDensityMatrix {
    pub fn trace(&self) -> Complex64 {
        self.entries[0][0] + self.entries[1][1]
    }

    /// `tr(self * other)`.
    pub fn trace_product(&self, other: &Self) -> Complex64 {
        let (a, b) = (&self.entries, &other.entries);
        let mut t = ZERO;
        for i in 0..2 {
            for k in 0..2 {
                t += a[i][k] * b[k][i];
            }
        }
        t
    }

    /// `tr(rho^2)`.
    pub fn purity(&self) -> f64 {
        self.trace_product(self).re
    }

    pub fn is_hermitian(&self, tol: f64) -> bool {
        let e = &self.entries;
        e[0][0].im.abs() <= tol
            && e[1][1].im.abs() <= tol
            && (e[0][1] - e[1][0].conj()).norm() <= tol
    }

    /// Eigenvalues in ascending order (closed form for 2x2 Hermitian).
    pub fn eigenvalues(&self) -> [f64; 2] {
        let e = &self.entries;
        let (a, d) = (e[0][0].re, e[1][1].re);
        let mean = 0.5 * (a + d);
        let radius = (0.25 * (a - d) * (a - d) + e[0][1].norm_sqr()).sqrt();
        [mean - radius, mean + radius]
    }
}

/// Partial trace of `|psi><psi|` over every qubit except `keep_qubit`.
pub fn reduced_density_matrix(state: &StateVector, keep_qubit: usize) -> Result<ReducedDensityMatrix> {
    state.check_qubit(keep_qubit)?;
    let mask = state.mask(keep_qubit);
    let amps = &state.amplitudes;
    let (mut r00, mut r11, mut r01) = (0.0, 0.0, ZERO);
    for i in (0..amps.len()).filter(|i| i & mask == 0) {
        let (a0, a1) = (amps[i], amps[i | mask]);
        r00 += a0.norm_sqr();
        r11 += a1.norm_sqr();
        r01 += a0 * a1.conj();
    }
    Ok(ReducedDensityMatrix {
        entries: [
            [Complex64::new(r00, 0.0), r01],
            [r01.conj(), Complex64::new(r11, 0.0)],
        ],
    })
}

/// Bloch vector `(<X>, <Y>, <Z>)` of one qubit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PauliExpectations {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl PauliExpectations {
    pub fn dot(&self, other: &Self) -> f64 {
        self.x * other.x + self.y * other.y + self.z * other.z
    }

    pub fn norm_sqr(&self) -> f64 {
        self.dot(self)
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    /// `(I + xX + yY + zZ) / 2`.
    pub fn to_density_matrix(&self) -> ReducedDensityMatrix {
        let h = 0.5;
        ReducedDensityMatrix {
            entries: [
                [
                    Complex64::new(h * (1.0 + self.z), 0.0),
                    Complex64::new(h * self.x, -h * self.y),
                ],
                [
                    Complex64::new(h * self.x, h * self.y),
                    Complex64::new(h * (1.0 - self.z), 0.0),
                ],
            ],
        }
    }
}

/// Pauli expectation values on `qubit`, evaluated directly as
/// `<psi| P_qubit |psi>` on the full state.
pub fn pauli_expectations(state: &StateVector, qubit: usize) -> Result<PauliExpectations> {
    state.check_qubit(qubit)?;
    let mask = state.mask(qubit);
    let amps = &state.amplitudes;
    let (mut x, mut y, mut z) = (0.0, 0.0, 0.0);
    for (i, a) in amps.iter().enumerate() {
        let partner = amps[i ^ mask];
        // X|b> = |1-b>; Y|0> = i|1>, Y|1> = -i|0>; Z|b> = (-1)^b |b>.
        let (yp, sign) = if i & mask == 0 {
            (Complex64::new(0.0, -1.0) * partner, 1.0)
        } else {
            (Complex64::new(0.0, 1.0) * partner, -1.0)
        };
        x += (a.conj() * partner).re;
        y += (a.conj() * yp).re;
        z += sign * a.norm_sqr();
    }
    Ok(PauliExpectations { x, y, z })
}
