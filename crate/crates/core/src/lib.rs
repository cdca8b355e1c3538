//! Quantum relational knowledge distillation.
//!
//! A small classical student network is trained against a frozen teacher.
//! Besides the usual task and logit-matching terms, intermediate features of
//! both networks are angle-encoded into simulated quantum states and the
//! pairwise kernel values (state fidelity or one-qubit projected overlap)
//! are aligned between teacher and student.
//!
//! The crate is organised bottom-up:
//!
//! - [`qsim`]: dense statevector simulation of the `Ry`-layer + CNOT-chain
//!   encoding circuit and the single-qubit measurement primitives.
//! - [`kernels`]: fidelity, projected and Gaussian kernels, exact gradients
//!   (parameter shift and adjoint), random-projection analysis and kernel
//!   concentration statistics.
//! - [`nn`]: a minimal reverse-mode autodiff tape with the conv / pool /
//!   dense layers and Adam optimizer needed for MNIST-scale networks.
//! - [`losses`]: Huber, KD, distance/angle relational and quantum
//!   relational losses with their analytic gradients.
//! - [`data`]: IDX (optionally gzipped) and CIFAR-10 binary loaders,
//!   stratified subsets and synthetic Gaussian blobs.
//! - [`distill`]: teacher training, distillation of every ablation variant,
//!   the feature-pair sampling protocol and run metrics.
//! - [`cli`]: the experiment driver behind the `qrkd` binary.
//!
//! See the `examples/` directory for one runnable program per capability.

pub mod cli;
pub mod data;
pub mod distill;
pub mod error;
mod fsio;
pub mod kernels;
pub mod losses;
pub mod nn;
pub mod qsim;
pub mod rng;
pub mod selftest;

pub use error::{Error, Result};
