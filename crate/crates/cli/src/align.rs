use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use urfb_core::layers::DualWeights;
use urfb_core::tensor::Tensor;

use crate::checkpoint;

/// `*.ckpt` files in `dir` or in `dir/checkpoints`, sorted by name.
pub fn find_checkpoints(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for d in [dir.to_path_buf(), dir.join("checkpoints")] {
        if !d.is_dir() {
            continue;
        }
        for e in std::fs::read_dir(&d).with_context(|| format!("listing {}", d.display()))? {
            let p = e?.path();
            if p.extension().is_some_and(|x| x == "ckpt") {
                found.push(p);
            }
        }
    }
    found.sort();
    if found.is_empty() {
        bail!("no checkpoints in {}", dir.display());
    }
    Ok(found)
}

/// Per-layer `corr(W_l, R_l^t)` from the tensors of one checkpoint, masks
/// respected. Layers come in index order.
pub fn layer_alignment(tensors: &[(String, Tensor)]) -> Result<Vec<f64>> {
    let mut layers: BTreeMap<usize, BTreeMap<&str, &Tensor>> = BTreeMap::new();
    for (name, t) in tensors {
        let (layer, part) = name
            .strip_prefix("layer")
            .and_then(|s| s.split_once('.'))
            .with_context(|| format!("unexpected tensor name `{name}`"))?;
        let j: usize = layer.parse().with_context(|| format!("bad layer index in `{name}`"))?;
        layers.entry(j).or_default().insert(part, t);
    }
    layers
        .into_iter()
        .map(|(j, parts)| {
            let (Some(w), Some(r)) = (parts.get("W"), parts.get("R")) else {
                bail!("layer {j} lacks W or R");
            };
            let dual = DualWeights::new((*w).clone(), (*r).clone())?
                .with_masks(parts.get("maskW").map(|m| (*m).clone()), parts.get("maskR").map(|m| (*m).clone()))?;
            Ok(dual.alignment()?)
        })
        .collect()
}

/// `checkpoint,epoch,corr_l1..corr_lk`, one row per checkpoint.
pub fn alignment_csv(dir: &Path) -> Result<String> {
    let paths = find_checkpoints(dir)?;
    let mut rows = Vec::new();
    for p in &paths {
        let c = checkpoint::read(p)?;
        rows.push((p, c.epoch, layer_alignment(&c.tensors)?));
    }
    let k = rows[0].2.len();
    if let Some(bad) = rows.iter().find(|r| r.2.len() != k) {
        bail!("{} has {} layers, expected {k}", bad.0.display(), bad.2.len());
    }
    let mut out = String::from("checkpoint,epoch");
    for l in 1..=k {
        let _ = write!(out, ",corr_l{l}");
    }
    out.push('\n');
    for (p, epoch, corr) in rows {
        let name = p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let _ = write!(out, "{name},{epoch}");
        for c in corr {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn cmd_align(dir: &Path, out: Option<&Path>) -> Result<()> {
    let csv = alignment_csv(dir)?;
    match out {
        Some(p) => std::fs::write(p, &csv).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{csv}"),
    }
    Ok(())
}
