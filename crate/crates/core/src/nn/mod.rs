//! Minimal reverse-mode autodiff and the layers needed for small CNNs.
//!
//! A [`Graph`] records one forward pass as a tape of nodes. Trainable
//! parameters live outside the tape in [`Tensor`]s owned by a [`Model`];
//! [`Graph::backward`] accumulates into their `grad` buffers.

mod checkpoint;
mod graph;
mod model;
mod optim;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointMeta};
pub use graph::{Graph, Tensor, Var};
pub use model::{parameter_count, LayerSpec, Model, ModelSpec};
pub use optim::{adam_step, AdamConfig, AdamState};

/// Numerically stable row-wise softmax of a `rows x cols` matrix.
pub fn softmax_rows(values: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    for row in values.chunks(cols) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / sum));
    }
    out
}
