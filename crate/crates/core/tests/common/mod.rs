//! Reference implementations shared by the integration tests. They are built
//! from first principles and never call into the code they check.

#![allow(dead_code)]

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type Matrix = Vec<Vec<Complex64>>;

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

pub fn identity(dim: usize) -> Matrix {
    (0..dim).map(|i| (0..dim).map(|j| c(if i == j { 1.0 } else { 0.0 })).collect()).collect()
}

pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ra, rb) = (a.len(), b.len());
    let mut out = vec![vec![c(0.0); ra * rb]; ra * rb];
    for i in 0..ra {
        for j in 0..ra {
            for k in 0..rb {
                for l in 0..rb {
                    out[i * rb + k][j * rb + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    let n = a.len();
    let mut out = vec![vec![c(0.0); n]; n];
    for i in 0..n {
        for k in 0..n {
            if a[i][k] == c(0.0) {
                continue;
            }
            for j in 0..n {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

pub fn add(a: &Matrix, b: &Matrix) -> Matrix {
    a.iter().zip(b).map(|(r, s)| r.iter().zip(s).map(|(x, y)| x + y).collect()).collect()
}

pub fn ry(theta: f64) -> Matrix {
    let (s, co) = (theta / 2.0).sin_cos();
    vec![vec![c(co), c(-s)], vec![c(s), c(co)]]
}

/// `ops[0] (x) ops[1] (x) ...`, qubit 0 leftmost.
pub fn kron_all(ops: &[Matrix]) -> Matrix {
    ops[1..].iter().fold(ops[0].clone(), |acc, m| kron(&acc, m))
}

/// CNOT on adjacent qubits `control`, `control + 1` as a full matrix.
pub fn cnot_adjacent(n: usize, control: usize) -> Matrix {
    let p0 = vec![vec![c(1.0), c(0.0)], vec![c(0.0), c(0.0)]];
    let p1 = vec![vec![c(0.0), c(0.0)], vec![c(0.0), c(1.0)]];
    let x = vec![vec![c(0.0), c(1.0)], vec![c(1.0), c(0.0)]];
    let build = |proj: &Matrix, target: &Matrix| {
        let ops: Vec<Matrix> = (0..n)
            .map(|q| {
                if q == control {
                    proj.clone()
                } else if q == control + 1 {
                    target.clone()
                } else {
                    identity(2)
                }
            })
            .collect();
        kron_all(&ops)
    };
    add(&build(&p0, &identity(2)), &build(&p1, &x))
}

/// Padded, optionally normalized angles.
pub fn oracle_angles(features: &[f64], capacity: usize, normalize: bool) -> Vec<f64> {
    let mut a = features.to_vec();
    a.resize(capacity, 0.0);
    if normalize {
        let norm = a.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            a.iter_mut().for_each(|v| *v *= std::f64::consts::PI / norm);
        }
    }
    a
}

/// The encoder's full unitary applied to |0...0>.
pub fn oracle_state(features: &[f64], n: usize, layers: usize, normalize: bool) -> Vec<Complex64> {
    let angles = oracle_angles(features, n * layers, normalize);
    let dim = 1 << n;
    let mut u = identity(dim);
    for l in 0..layers {
        let layer: Vec<Matrix> = (0..n).map(|j| ry(angles[l * n + j])).collect();
        u = matmul(&kron_all(&layer), &u);
    }
    for q in 0..n.saturating_sub(1) {
        u = matmul(&cnot_adjacent(n, q), &u);
    }
    (0..dim).map(|i| u[i][0]).collect()
}

pub fn oracle_fidelity(a: &[Complex64], b: &[Complex64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum::<Complex64>().norm_sqr()
}

/// Single-qubit reduced state of qubit `q` as a dense 2x2 matrix.
pub fn oracle_rdm(state: &[Complex64], n: usize, q: usize) -> [[Complex64; 2]; 2] {
    let mut rho = [[c(0.0); 2]; 2];
    let shift = n - 1 - q;
    for i in 0..state.len() {
        for j in 0..state.len() {
            // Keep only entries where every other qubit agrees.
            if (i ^ j) & !(1 << shift) != 0 {
                continue;
            }
            rho[(i >> shift) & 1][(j >> shift) & 1] += state[i] * state[j].conj();
        }
    }
    rho
}

/// `tr(rho_0(a) rho_0(b))` for the first qubit.
pub fn oracle_projected(a: &[Complex64], b: &[Complex64], n: usize) -> f64 {
    let (ra, rb) = (oracle_rdm(a, n, 0), oracle_rdm(b, n, 0));
    let mut tr = c(0.0);
    for i in 0..2 {
        for k in 0..2 {
            tr += ra[i][k] * rb[k][i];
        }
    }
    tr.re
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal_vec(rng: &mut impl Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            scale * z
        })
        .collect()
}

pub fn normal_rows(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..rows).map(|_| normal_vec(rng, cols, scale)).collect()
}

/// Central difference of `f` along every coordinate of `x`.
pub fn central_diff(x: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|m| {
            let orig = probe[m];
            probe[m] = orig + h;
            let up = f(&probe);
            probe[m] = orig - h;
            let down = f(&probe);
            probe[m] = orig;
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max|g - fd| / max(max|fd|, 1e-8)`.
pub fn relative_error(g: &[f64], fd: &[f64]) -> f64 {
    let diff = g.iter().zip(fd).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let scale = fd.iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-8);
    diff / scale
}
