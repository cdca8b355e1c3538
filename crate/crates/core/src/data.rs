//! Datasets: IDX and CIFAR-10 binary loaders, stratified subsets and
//! synthetic Gaussian blobs.

use std::fs;
use std::io::{self, Read};
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Tensor;
use crate::rng::{substream, Stream};

/// Environment variable naming the directory that holds the MNIST IDX files.
pub const MNIST_DIR_ENV: &str = "QRKD_MNIST_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

/// Images in `[0, 1]` with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    images: Vec<f64>,
    labels: Vec<usize>,
    sample_shape: Vec<usize>,
    classes: usize,
    pub split: Split,
}

impl LabeledDataset {
    pub fn new(images: Vec<f64>, labels: Vec<usize>, sample_shape: Vec<usize>, classes: usize, split: Split) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if per == 0 || images.len() != per * labels.len() {
            return Err(Error::shape(format!(
                "{} values for {} samples of shape {sample_shape:?}",
                images.len(),
                labels.len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index {
                what: "classes",
                index: bad,
                len: classes,
            });
        }
        if images.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::validation("image values must lie in [0, 1]"));
        }
        Ok(Self {
            images,
            labels,
            sample_shape,
            classes,
            split,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.sample_shape
    }

    pub fn sample_len(&self) -> usize {
        self.sample_shape.iter().product()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn images(&self) -> &[f64] {
        &self.images
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.sample_len();
        &self.images[i * n..(i + 1) * n]
    }

    /// Stacks the samples at `indices` into a `[B, ...sample_shape]` tensor.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let mut values = Vec::with_capacity(indices.len() * self.sample_len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Index {
                    what: "samples",
                    index: i,
                    len: self.len(),
                });
            }
            values.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        let mut shape = vec![indices.len()];
        shape.extend_from_slice(&self.sample_shape);
        Ok((Tensor::new(shape, values)?, labels))
    }

    /// Samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        let (batch, labels) = self.batch(indices)?;
        Ok(Self {
            images: batch.values,
            labels,
            sample_shape: self.sample_shape.clone(),
            classes: self.classes,
            split: self.split,
        })
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    if raw.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|e| Error::io(path, e))?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn truncated(path: &Path, what: &str) -> Error {
    Error::io(path, io::Error::new(io::ErrorKind::UnexpectedEof, format!("truncated {what}")))
}

fn be_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_be_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

const IDX_IMAGES: u32 = 0x0000_0803;
const IDX_LABELS: u32 = 0x0000_0801;

/// Parses an IDX image file (plain or gzip) into values scaled by 1/255.
/// Returns `(count, rows, cols, values)`.
pub fn read_idx_images(path: &Path) -> Result<(usize, usize, usize, Vec<f64>)> {
    let bytes = read_maybe_gz(path)?;
    if bytes.len() < 4 {
        return Err(truncated(path, "header"));
    }
    let magic = be_u32(&bytes, 0);
    if magic != IDX_IMAGES {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("magic {magic:#010x}, expected {IDX_IMAGES:#010x} for images"),
        });
    }
    if bytes.len() < 16 {
        return Err(truncated(path, "header"));
    }
    let (count, rows, cols) = (be_u32(&bytes, 4) as usize, be_u32(&bytes, 8) as usize, be_u32(&bytes, 12) as usize);
    let needed = count * rows * cols;
    let body = &bytes[16..];
    if body.len() < needed {
        return Err(truncated(path, "pixel data"));
    }
    let values = body[..needed].iter().map(|&b| f64::from(b) / 255.0).collect();
    Ok((count, rows, cols, values))
}

/// Parses an IDX label file (plain or gzip).
pub fn read_idx_labels(path: &Path) -> Result<Vec<usize>> {
    let bytes = read_maybe_gz(path)?;
    if bytes.len() < 4 {
        return Err(truncated(path, "header"));
    }
    let magic = be_u32(&bytes, 0);
    if magic != IDX_LABELS {
        return Err(Error::Format {
            path: path.to_path_buf(),
            reason: format!("magic {magic:#010x}, expected {IDX_LABELS:#010x} for labels"),
        });
    }
    if bytes.len() < 8 {
        return Err(truncated(path, "header"));
    }
    let count = be_u32(&bytes, 4) as usize;
    let body = &bytes[8..];
    if body.len() < count {
        return Err(truncated(path, "label data"));
    }
    Ok(body[..count].iter().map(|&b| b as usize).collect())
}

/// Loads an IDX image/label file pair as a 10-class dataset of `1 x rows x cols` images.
pub fn load_mnist_idx(images: &Path, labels: &Path, split: Split) -> Result<LabeledDataset> {
    let (count, rows, cols, values) = read_idx_images(images)?;
    let labels_v = read_idx_labels(labels)?;
    if labels_v.len() != count {
        return Err(Error::Format {
            path: labels.to_path_buf(),
            reason: format!("{} labels for {count} images", labels_v.len()),
        });
    }
    LabeledDataset::new(values, labels_v, vec![1, rows, cols], 10, split).map_err(|e| Error::Format {
        path: labels.to_path_buf(),
        reason: e.to_string(),
    })
}

/// Directory holding the MNIST files: `$QRKD_MNIST_DIR`, else `data/mnist`.
pub fn default_mnist_dir() -> PathBuf {
    std::env::var_os(MNIST_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("data/mnist"))
}

fn locate(dir: &Path, stem: &str) -> PathBuf {
    let gz = dir.join(format!("{stem}.gz"));
    if gz.exists() {
        gz
    } else {
        dir.join(stem)
    }
}

/// Loads one split from a directory with the canonical MNIST file names,
/// gzipped or not.
pub fn load_mnist_dir(dir: &Path, split: Split) -> Result<LabeledDataset> {
    let prefix = match split {
        Split::Train => "train",
        Split::Test => "t10k",
    };
    load_mnist_idx(
        &locate(dir, &format!("{prefix}-images-idx3-ubyte")),
        &locate(dir, &format!("{prefix}-labels-idx1-ubyte")),
        split,
    )
}

const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;

/// Loads CIFAR-10 binary batches (one label byte then 3072 channel-major pixels per record).
pub fn load_cifar10_bin(paths: &[PathBuf], split: Split) -> Result<LabeledDataset> {
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        let bytes = read_maybe_gz(path)?;
        if bytes.len() % CIFAR_RECORD != 0 {
            return Err(truncated(path, "CIFAR-10 record"));
        }
        for record in bytes.chunks_exact(CIFAR_RECORD) {
            if record[0] >= 10 {
                return Err(Error::Format {
                    path: path.clone(),
                    reason: format!("label byte {}", record[0]),
                });
            }
            labels.push(record[0] as usize);
            images.extend(record[1..].iter().map(|&b| f64::from(b) / 255.0));
        }
    }
    LabeledDataset::new(images, labels, vec![3, 32, 32], 10, split)
}

/// Class-stratified sample of `n` items, in shuffled order.
///
/// Each class receives `n * count_c / total` items rounded down; leftover
/// slots go to the classes with the largest remainders (lowest index first
/// on ties).
pub fn subset(dataset: &LabeledDataset, n: usize, seed: u64) -> Result<LabeledDataset> {
    let total = dataset.len();
    if n > total {
        return Err(Error::InvalidArgument(format!("subset of {n} from {total} samples")));
    }
    let mut rng = substream(seed, Stream::Subset);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.classes()];
    for (i, &l) in dataset.labels().iter().enumerate() {
        by_class[l].push(i);
    }
    let mut quotas: Vec<usize> = by_class.iter().map(|c| n * c.len() / total.max(1)).collect();
    let mut left = n - quotas.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..by_class.len()).collect();
    order.sort_by_key(|&c| std::cmp::Reverse((n * by_class[c].len()) % total.max(1)));
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        if quotas[c] < by_class[c].len() {
            quotas[c] += 1;
            left -= 1;
        }
    }
    let mut chosen = Vec::with_capacity(n);
    for (members, &q) in by_class.iter_mut().zip(&quotas) {
        members.shuffle(&mut rng);
        chosen.extend_from_slice(&members[..q]);
    }
    chosen.shuffle(&mut rng);
    dataset.select(&chosen)
}

/// Gaussian blobs around uniformly drawn class centres in `[0, 1]^dim`,
/// clamped to `[0, 1]`. Samples are `1 x s x s` when `dim == s * s`, else flat.
pub fn synthetic_blobs(classes: usize, per_class: usize, dim: usize, spread: f64, seed: u64) -> Result<LabeledDataset> {
    if classes == 0 || per_class == 0 || dim == 0 || !(spread >= 0.0 && spread.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "blobs need positive sizes and spread, got classes={classes} per_class={per_class} dim={dim} spread={spread}"
        )));
    }
    let mut rng = substream(seed, Stream::Features);
    let centers: Vec<Vec<f64>> = (0..classes)
        .map(|_| (0..dim).map(|_| rng.random::<f64>()).collect())
        .collect();
    let mut images = Vec::with_capacity(classes * per_class * dim);
    let mut labels = Vec::with_capacity(classes * per_class);
    for _ in 0..per_class {
        for (c, center) in centers.iter().enumerate() {
            for &m in center {
                let z: f64 = StandardNormal.sample(&mut rng);
                images.push((m + spread * z).clamp(0.0, 1.0));
            }
            labels.push(c);
        }
    }
    let side = (dim as f64).sqrt().round() as usize;
    let shape = if side * side == dim { vec![1, side, side] } else { vec![dim] };
    LabeledDataset::new(images, labels, shape, classes, Split::Train)
}
