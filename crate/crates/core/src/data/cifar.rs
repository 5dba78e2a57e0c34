use std::path::Path;

use super::{bytes_to_unit, read_file, DataError, Dataset, Result};
use crate::tensor::Tensor;

const PIXELS: usize = 3 * 32 * 32;

/// Parse fixed-size records of `label_bytes` header bytes followed by 3072
/// pixels; the last header byte is the label.
pub fn parse_cifar(bytes: &[u8], label_bytes: usize, classes: usize, what: &str) -> Result<Dataset> {
    let rec = label_bytes + PIXELS;
    if !bytes.len().is_multiple_of(rec) {
        let n = bytes.len() / rec;
        return Err(DataError::Truncated {
            what: what.to_string(),
            offset: n * rec,
            remaining: bytes.len() - n * rec,
        });
    }
    let n = bytes.len() / rec;
    let mut labels = Vec::with_capacity(n);
    let mut data = Vec::with_capacity(n * PIXELS);
    for (i, r) in bytes.chunks_exact(rec).enumerate() {
        let label = r[label_bytes - 1] as usize;
        if label >= classes {
            return Err(DataError::BadLabel {
                label,
                classes,
                record: i,
            });
        }
        labels.push(label);
        data.extend(bytes_to_unit(&r[label_bytes..]));
    }
    let images = Tensor::new(vec![n, 3, 32, 32], data).expect("record sizes checked");
    Dataset::new(images, labels, classes)
}

fn load_files(paths: &[std::path::PathBuf], label_bytes: usize, classes: usize) -> Result<Dataset> {
    let mut bytes = Vec::new();
    for p in paths {
        let b = read_file(p)?;
        // check each file on its own so errors point at the culprit
        parse_cifar(&b, label_bytes, classes, &p.display().to_string())?;
        bytes.extend_from_slice(&b);
    }
    parse_cifar(&bytes, label_bytes, classes, "cifar")
}

fn present(dir: &Path, names: &[String]) -> Result<Vec<std::path::PathBuf>> {
    let found: Vec<_> = names.iter().map(|n| dir.join(n)).filter(|p| p.exists()).collect();
    if found.is_empty() {
        return Err(DataError::Missing(dir.to_path_buf()));
    }
    Ok(found)
}

/// Training batches `data_batch_1.bin .. data_batch_5.bin` (those present, in order).
pub fn load_cifar10(dir: &Path) -> Result<Dataset> {
    let names: Vec<String> = (1..=5).map(|i| format!("data_batch_{i}.bin")).collect();
    load_files(&present(dir, &names)?, 1, 10)
}

pub fn load_cifar10_test(dir: &Path) -> Result<Dataset> {
    load_files(&present(dir, &["test_batch.bin".to_string()])?, 1, 10)
}

pub fn load_cifar100(dir: &Path) -> Result<Dataset> {
    load_files(&present(dir, &["train.bin".to_string()])?, 2, 100)
}

pub fn load_cifar100_test(dir: &Path) -> Result<Dataset> {
    load_files(&present(dir, &["test.bin".to_string()])?, 2, 100)
}
