//! Binary checkpoint files.
//!
//! Layout: the 8-byte magic `QRKDCKPT`, a little-endian `u32` format version,
//! a little-endian `u64` header length, a UTF-8 JSON header
//! ([`CheckpointMeta`]), then every parameter as little-endian `f64` in the
//! order listed by the header. A plain-text `<file>.manifest.txt` listing
//! tensor names and shapes is written next to each checkpoint.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::graph::Tensor;
use super::model::{Model, ModelSpec};
use crate::error::{Error, Result};
use crate::fsio::write_atomic;

const MAGIC: &[u8; 8] = b"QRKDCKPT";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub architecture: ModelSpec,
    pub seed: u64,
    pub parameter_count: usize,
    pub tensors: Vec<TensorEntry>,
}

fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".manifest.txt");
    path.with_file_name(name)
}

pub fn save_checkpoint(path: &Path, model: &Model, seed: u64) -> Result<CheckpointMeta> {
    let meta = CheckpointMeta {
        architecture: model.spec.clone(),
        seed,
        parameter_count: model.parameter_count(),
        tensors: model
            .spec
            .param_layout()
            .into_iter()
            .map(|(name, shape)| TensorEntry { name, shape })
            .collect(),
    };
    let header = serde_json::to_vec(&meta)?;
    let mut bytes = Vec::with_capacity(20 + header.len() + 8 * meta.parameter_count);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for p in &model.params {
        if let Some(v) = p.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("parameter value {v} in checkpoint")));
        }
        for v in &p.values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_atomic(path, &bytes)?;

    let mut manifest = String::new();
    let _ = writeln!(manifest, "architecture {}", meta.architecture.name);
    let _ = writeln!(manifest, "seed {}", meta.seed);
    let _ = writeln!(manifest, "parameters {}", meta.parameter_count);
    for t in &meta.tensors {
        let dims: Vec<String> = t.shape.iter().map(usize::to_string).collect();
        let _ = writeln!(manifest, "{} {}", t.name, dims.join("x"));
    }
    write_atomic(&manifest_path(path), manifest.as_bytes())?;
    Ok(meta)
}

pub fn load_checkpoint(path: &Path) -> Result<(Model, CheckpointMeta)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != VERSION {
        return Err(bad(&format!("unsupported version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let body = 20usize
        .checked_add(header_len)
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| bad("truncated header"))?;
    let meta: CheckpointMeta =
        serde_json::from_slice(&bytes[20..body]).map_err(|e| bad(&format!("header: {e}")))?;
    let layout = meta.architecture.param_layout();
    let matches = layout.len() == meta.tensors.len()
        && layout.iter().zip(&meta.tensors).all(|((n, s), t)| *n == t.name && *s == t.shape);
    if !matches {
        return Err(bad("tensor list does not match the architecture"));
    }
    let data = &bytes[body..];
    if data.len() != 8 * meta.parameter_count {
        return Err(bad(&format!(
            "expected {} parameters, found {} bytes",
            meta.parameter_count,
            data.len()
        )));
    }
    let mut values = data
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let mut params = Vec::with_capacity(layout.len());
    for (_, shape) in layout {
        let n: usize = shape.iter().product();
        params.push(Tensor::new(shape, values.by_ref().take(n).collect())?);
    }
    let model = Model::from_params(meta.architecture.clone(), params).map_err(|_| bad("parameter count mismatch"))?;
    Ok((model, meta))
}
