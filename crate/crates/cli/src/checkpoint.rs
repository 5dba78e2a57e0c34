//! Checkpoint files: a text header naming each tensor and its shape, then the
//! raw little-endian `f64` data of every tensor in header order.
//!
//! ```text
//! urfb-checkpoint 1
//! epoch 3
//! tensor layer0.W 16,1,5,5
//! tensor layer0.R 1,16,5,5
//! end
//! <bytes>
//! ```

use std::path::Path;

use anyhow::{bail, Context, Result};
use urfb_core::tensor::Tensor;

const MAGIC: &str = "urfb-checkpoint 1";

pub struct Checkpoint {
    pub epoch: usize,
    pub tensors: Vec<(String, Tensor)>,
}

pub fn write(path: &Path, epoch: usize, tensors: &[(String, Tensor)]) -> Result<()> {
    let mut out = format!("{MAGIC}\nepoch {epoch}\n").into_bytes();
    for (name, t) in tensors {
        let dims: Vec<String> = t.shape().iter().map(|d| d.to_string()).collect();
        out.extend(format!("tensor {name} {}\n", dims.join(",")).bytes());
    }
    out.extend(b"end\n");
    for (_, t) in tensors {
        for v in t.data() {
            out.extend(v.to_le_bytes());
        }
    }
    std::fs::write(path, out).with_context(|| format!("writing checkpoint {}", path.display()))
}

pub fn read(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path).with_context(|| format!("reading checkpoint {}", path.display()))?;
    let corrupt = |why: &str| anyhow::anyhow!("corrupt checkpoint {}: {why}", path.display());
    let mut pos = 0;
    let mut next_line = || -> Result<String> {
        let end = bytes[pos..]
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| corrupt("header not terminated"))?;
        let line = std::str::from_utf8(&bytes[pos..pos + end]).map_err(|_| corrupt("header is not text"))?;
        pos += end + 1;
        Ok(line.to_string())
    };
    if next_line()? != MAGIC {
        return Err(corrupt("bad magic line"));
    }
    let epoch = next_line()?
        .strip_prefix("epoch ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| corrupt("bad epoch line"))?;
    let mut heads = Vec::new();
    loop {
        let line = next_line()?;
        if line == "end" {
            break;
        }
        let mut parts = line.split(' ');
        let (Some("tensor"), Some(name), Some(dims), None) = (parts.next(), parts.next(), parts.next(), parts.next())
        else {
            return Err(corrupt(&format!("bad tensor line `{line}`")));
        };
        let shape: Vec<usize> = dims
            .split(',')
            .map(|d| d.parse())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| corrupt(&format!("bad shape `{dims}`")))?;
        heads.push((name.to_string(), shape));
    }
    let body = &bytes[pos..];
    let want: usize = heads.iter().map(|(_, s)| s.iter().product::<usize>() * 8).sum();
    if body.len() != want {
        bail!(corrupt(&format!("expected {want} data bytes, found {}", body.len())));
    }
    let mut tensors = Vec::with_capacity(heads.len());
    let mut off = 0;
    for (name, shape) in heads {
        let n: usize = shape.iter().product();
        let data = body[off..off + 8 * n]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect();
        off += 8 * n;
        tensors.push((name, Tensor::new(shape, data).map_err(|e| corrupt(&e.to_string()))?));
    }
    Ok(Checkpoint { epoch, tensors })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        let t = vec![
            ("layer0.W".to_string(), Tensor::new(vec![2, 3], vec![0.1, -2.5, 3e-300, 1.0, 0.0, -0.0]).unwrap()),
            ("layer0.R".to_string(), Tensor::new(vec![3], vec![f64::MAX, 1.5, -7.25]).unwrap()),
        ];
        write(&p, 7, &t).unwrap();
        let c = read(&p).unwrap();
        assert_eq!(c.epoch, 7);
        assert_eq!(c.tensors, t);
    }

    #[test]
    fn truncated_data_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.ckpt");
        write(&p, 0, &[("x".to_string(), Tensor::zeros(vec![4]))]).unwrap();
        let mut b = std::fs::read(&p).unwrap();
        b.truncate(b.len() - 3);
        std::fs::write(&p, b).unwrap();
        let e = read(&p).err().unwrap().to_string();
        assert!(e.contains("corrupt checkpoint"), "{e}");
    }
}
