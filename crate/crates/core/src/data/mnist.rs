use std::io::Read;
use std::path::{Path, PathBuf};

use flate2::read::GzDecoder;

use super::{bytes_to_unit, read_file, DataError, Dataset, Result};
use crate::tensor::Tensor;

const IMAGE_MAGIC: u32 = 0x0000_0803;
const LABEL_MAGIC: u32 = 0x0000_0801;

fn be_u32(bytes: &[u8], at: usize, what: &str) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| DataError::Truncated {
            what: what.to_string(),
            offset: at,
            remaining: bytes.len().saturating_sub(at),
        })
}

/// `(count, rows, cols, pixels)` from an IDX3 image file.
pub fn parse_idx_images(bytes: &[u8], what: &str) -> Result<(usize, usize, usize, Vec<u8>)> {
    let magic = be_u32(bytes, 0, what)?;
    if magic != IMAGE_MAGIC {
        return Err(DataError::BadMagic {
            what: what.to_string(),
            found: magic,
            expected: IMAGE_MAGIC,
        });
    }
    let n = be_u32(bytes, 4, what)? as usize;
    let rows = be_u32(bytes, 8, what)? as usize;
    let cols = be_u32(bytes, 12, what)? as usize;
    let body = &bytes[16..];
    let want = n * rows * cols;
    if body.len() != want {
        return Err(DataError::Truncated {
            what: what.to_string(),
            offset: 16 + want.min(body.len()),
            remaining: body.len().abs_diff(want),
        });
    }
    Ok((n, rows, cols, body.to_vec()))
}

pub fn parse_idx_labels(bytes: &[u8], what: &str) -> Result<Vec<u8>> {
    let magic = be_u32(bytes, 0, what)?;
    if magic != LABEL_MAGIC {
        return Err(DataError::BadMagic {
            what: what.to_string(),
            found: magic,
            expected: LABEL_MAGIC,
        });
    }
    let n = be_u32(bytes, 4, what)? as usize;
    let body = &bytes[8..];
    if body.len() != n {
        return Err(DataError::Truncated {
            what: what.to_string(),
            offset: 8 + n.min(body.len()),
            remaining: body.len().abs_diff(n),
        });
    }
    Ok(body.to_vec())
}

/// Read `name` or `name.gz`, whichever exists.
fn read_maybe_gz(dir: &Path, name: &str) -> Result<(PathBuf, Vec<u8>)> {
    let plain = dir.join(name);
    if plain.exists() {
        return Ok((plain.clone(), read_file(&plain)?));
    }
    let gz = dir.join(format!("{name}.gz"));
    if gz.exists() {
        let raw = read_file(&gz)?;
        let mut out = Vec::new();
        GzDecoder::new(&raw[..])
            .read_to_end(&mut out)
            .map_err(|source| DataError::Io {
                path: gz.clone(),
                source,
            })?;
        return Ok((gz, out));
    }
    Err(DataError::Missing(plain))
}

fn load_pair(dir: &Path, prefix: &str) -> Result<Dataset> {
    let (ip, ib) = read_maybe_gz(dir, &format!("{prefix}-images-idx3-ubyte"))?;
    let (lp, lb) = read_maybe_gz(dir, &format!("{prefix}-labels-idx1-ubyte"))?;
    let (n, rows, cols, pixels) = parse_idx_images(&ib, &ip.display().to_string())?;
    let labels = parse_idx_labels(&lb, &lp.display().to_string())?;
    if labels.len() != n {
        return Err(DataError::Inconsistent(format!(
            "{n} images in {} but {} labels in {}",
            ip.display(),
            labels.len(),
            lp.display()
        )));
    }
    let images = Tensor::new(vec![n, 1, rows, cols], bytes_to_unit(&pixels).collect()).expect("sizes checked");
    Dataset::new(images, labels.into_iter().map(usize::from).collect(), 10)
}

/// `train-images-idx3-ubyte` + `train-labels-idx1-ubyte` (optionally `.gz`).
pub fn load_mnist(dir: &Path) -> Result<Dataset> {
    load_pair(dir, "train")
}

pub fn load_mnist_test(dir: &Path) -> Result<Dataset> {
    load_pair(dir, "t10k")
}
