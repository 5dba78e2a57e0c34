//! Datasets: CIFAR-10/100 binary batches, MNIST IDX files, synthetic blobs.
//!
//! Pixels are mapped byte-to-real as `v / 255` and nothing else.
//!
//! Directory layouts:
//!
//! * CIFAR-10: `data_batch_1.bin .. data_batch_5.bin`, `test_batch.bin`
//!   (3073-byte records: label, 3072 channel-major pixels)
//! * CIFAR-100: `train.bin`, `test.bin` (3074-byte records: coarse label,
//!   fine label, pixels; the fine label is used)
//! * MNIST: `train-images-idx3-ubyte`, `train-labels-idx1-ubyte` and the
//!   `t10k-` pair, each optionally gzipped (`.gz`)

mod blobs;
mod cifar;
mod mnist;

pub use blobs::{pairwise_margin, toy_blobs};
pub use cifar::{load_cifar10, load_cifar100, load_cifar100_test, load_cifar10_test, parse_cifar};
pub use mnist::{load_mnist, load_mnist_test, parse_idx_images, parse_idx_labels};

use std::path::PathBuf;

use thiserror::Error;

use crate::netspec::Shape3;
use crate::tensor::{Rng, Tensor};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{what}: truncated record at byte {offset} ({remaining} trailing bytes)")]
    Truncated {
        what: String,
        offset: usize,
        remaining: usize,
    },
    #[error("label {label} out of range for {classes} classes (record {record})")]
    BadLabel {
        label: usize,
        classes: usize,
        record: usize,
    },
    #[error("{what}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic { what: String, found: u32, expected: u32 },
    #[error("inconsistent data: {0}")]
    Inconsistent(String),
    #[error("no dataset files found in {0}")]
    Missing(PathBuf),
    #[error("invalid argument: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, DataError>;

pub(crate) fn read_file(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Images `[N, C, H, W]` in `[0, 1]` with integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor,
    labels: Vec<usize>,
    classes: usize,
}

impl Dataset {
    pub fn new(images: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if images.rank() != 4 {
            return Err(DataError::Inconsistent(format!(
                "images must be [N,C,H,W], got {:?}",
                images.shape()
            )));
        }
        if images.shape()[0] != labels.len() {
            return Err(DataError::Inconsistent(format!(
                "{} images but {} labels",
                images.shape()[0],
                labels.len()
            )));
        }
        if let Some((record, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(DataError::BadLabel { label, classes, record });
        }
        Ok(Dataset { images, labels, classes })
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

    pub fn input_shape(&self) -> Shape3 {
        let s = self.images.shape();
        Shape3::new(s[1], s[2], s[3])
    }

    pub fn images(&self) -> &Tensor {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f64] {
        let n = self.input_shape().len();
        &self.images.data()[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        let sh = self.input_shape();
        let mut data = Vec::with_capacity(idx.len() * sh.len());
        for &i in idx {
            data.extend_from_slice(self.image(i));
        }
        Dataset {
            images: Tensor::new(vec![idx.len(), sh.c, sh.h, sh.w], data).expect("sizes agree"),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }

    /// The first `n` samples.
    pub fn take(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        self.subset(&idx)
    }

    /// Split off the last `n` samples as a held-out set.
    pub fn split_tail(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n > self.len() {
            return Err(DataError::Invalid(format!(
                "validation size {n} exceeds dataset size {}",
                self.len()
            )));
        }
        let cut = self.len() - n;
        let head: Vec<usize> = (0..cut).collect();
        let tail: Vec<usize> = (cut..self.len()).collect();
        Ok((self.subset(&head), self.subset(&tail)))
    }

    /// Seeded batches of exactly `batch` indices; the remainder is dropped.
    pub fn batches(&self, batch: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
        let perm = rng.permutation(self.len());
        perm.chunks_exact(batch.max(1)).map(|c| c.to_vec()).collect()
    }
}

pub(crate) fn bytes_to_unit(bytes: &[u8]) -> impl Iterator<Item = f64> + '_ {
    bytes.iter().map(|&b| b as f64 / 255.0)
}
