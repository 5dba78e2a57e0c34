use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use urfb_core::data::{load_cifar10, load_cifar100, load_mnist, toy_blobs, Dataset};
use urfb_core::feedback::{train_epoch, MetricsRecord, Network, NetworkOptions, TrainParams};
use urfb_core::netspec::{resolve_arch, DatasetKind, ExperimentConfig, Mode};
use urfb_core::tensor::Rng;

use crate::checkpoint;
use crate::manifest::RunManifest;
use crate::plot::{line_chart, Panel};

/// Environment variable naming the directory that holds one sub-directory
/// per dataset (`cifar-10-batches-bin`, `cifar-100-binary`, `mnist`).
pub const DATA_ENV: &str = "URFB_DATA";

fn data_dir(cfg: &ExperimentConfig) -> Result<PathBuf> {
    if let Some(d) = &cfg.data_dir {
        return Ok(d.clone());
    }
    let root = std::env::var_os(DATA_ENV)
        .with_context(|| format!("no data_dir given and {DATA_ENV} is not set"))?;
    let sub = match cfg.dataset {
        DatasetKind::Cifar10 => "cifar-10-batches-bin",
        DatasetKind::Cifar100 => "cifar-100-binary",
        DatasetKind::Mnist => "mnist",
        DatasetKind::Blobs => unreachable!("blobs are generated"),
    };
    Ok(PathBuf::from(root).join(sub))
}

/// Training and validation sets: the validation set is the last `val_size`
/// training samples, then the rest is cut to `train_size` if that is set.
pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset, Option<Dataset>)> {
    let full = match cfg.dataset {
        DatasetKind::Blobs => toy_blobs(&mut Rng::new(cfg.seed).derive(7), 100, 3, 4, 6.0)?,
        DatasetKind::Cifar10 => load_cifar10(&data_dir(cfg)?)?,
        DatasetKind::Cifar100 => load_cifar100(&data_dir(cfg)?)?,
        DatasetKind::Mnist => load_mnist(&data_dir(cfg)?)?,
    };
    let (train, val) = if cfg.val_size > 0 {
        let (a, b) = full.split_tail(cfg.val_size)?;
        (a, Some(b))
    } else {
        (full, None)
    };
    let train = if cfg.train_size > 0 { train.take(cfg.train_size) } else { train };
    Ok((train, val))
}

/// `epoch,train_err,val_err,train_loss,corr_l1..corr_lk`; `val_err` is empty
/// when there is no validation set.
pub fn metrics_csv(layers: usize, rows: &[MetricsRecord]) -> String {
    let mut out = String::from("epoch,train_err,val_err,train_loss");
    for l in 1..=layers {
        let _ = write!(out, ",corr_l{l}");
    }
    out.push('\n');
    for r in rows {
        let val = r.val_error.map(|v| v.to_string()).unwrap_or_default();
        let _ = write!(out, "{},{},{},{}", r.epoch, r.train_error, val, r.train_loss);
        for c in &r.alignment {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

fn save_checkpoint(net: &Network, dir: &Path, epoch: usize, manifest: &mut RunManifest<ExperimentConfig>) -> Result<()> {
    let name = format!("checkpoints/epoch_{epoch:05}.ckpt");
    checkpoint::write(&dir.join(&name), epoch, &net.named_tensors())?;
    manifest.add(name);
    Ok(())
}

/// One training run into `out`. Checkpoints hold the initial weights
/// (epoch 0), every `checkpoint_every` epochs and the final weights.
pub fn run(cfg: &ExperimentConfig, out: &Path, train: &Dataset, val: Option<&Dataset>) -> Result<Vec<MetricsRecord>> {
    std::fs::create_dir_all(out.join("checkpoints")).with_context(|| format!("creating {}", out.display()))?;
    let mut manifest = RunManifest::new("train", cfg.clone(), cfg.seed, out);
    let mut spec = resolve_arch(&cfg.arch, train.input_shape(), train.classes())?;
    if cfg.untied {
        spec = spec.untied();
    }
    let opts = NetworkOptions {
        connectivity: cfg.connectivity,
        ..NetworkOptions::new(cfg.mode.rule())
    };
    let root = Rng::new(cfg.seed);
    let mut net = Network::build(&spec, opts, &root.derive(0))?;
    let params = TrainParams {
        mu: cfg.mu,
        ..TrainParams::new(cfg.eta, cfg.batch_size, cfg.effective_loss())
    };
    let mut rng = root.derive(1);
    save_checkpoint(&net, out, 0, &mut manifest)?;
    let mut rows = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let m = train_epoch(&mut net, train, val, &params, &mut rng, epoch)?;
        eprintln!(
            "[{}] epoch {epoch}: train_err {:.4} val_err {} loss {:.4} ({:.1}s)",
            cfg.mode,
            m.train_error,
            m.val_error.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into()),
            m.train_loss,
            m.wall_time_s
        );
        rows.push(m);
        let due = cfg.checkpoint_every > 0 && epoch % cfg.checkpoint_every == 0;
        if due || epoch == cfg.epochs {
            save_checkpoint(&net, out, epoch, &mut manifest)?;
        }
    }
    let layers = net.param_layers().len();
    std::fs::write(out.join("metrics.csv"), metrics_csv(layers, &rows))?;
    manifest.add("metrics.csv");

    let epochs: Vec<f64> = rows.iter().map(|r| r.epoch as f64).collect();
    let series = |f: &dyn Fn(&MetricsRecord) -> f64| epochs.iter().cloned().zip(rows.iter().map(f)).collect();
    let errors = Panel {
        series: vec![
            series(&|r| r.train_error),
            series(&|r| r.val_error.unwrap_or(f64::NAN)),
        ],
        y_range: Some((0.0, 1.0)),
    };
    let align = Panel {
        series: (0..layers).map(|l| series(&|r| r.alignment[l])).collect(),
        y_range: Some((-1.0, 1.0)),
    };
    line_chart(&out.join("curves.png"), &[errors, align])?;
    manifest.add("curves.png");
    manifest.finish()?;
    Ok(rows)
}

/// Runs every mode in `modes`: a single mode writes into `out`, several
/// modes write into sibling directories `out/<MODE>` and run concurrently.
pub fn cmd_train(cfg: &ExperimentConfig, modes: &[Mode], out: &Path) -> Result<()> {
    if modes.is_empty() {
        bail!("no mode given");
    }
    let (train, val) = load_data(cfg)?;
    eprintln!(
        "{} training and {} validation samples, input {}",
        train.len(),
        val.as_ref().map_or(0, |v| v.len()),
        train.input_shape()
    );
    if modes.len() == 1 {
        let c = ExperimentConfig { mode: modes[0], ..cfg.clone() };
        run(&c, out, &train, val.as_ref())?;
        return Ok(());
    }
    let results: Vec<Result<Vec<MetricsRecord>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = modes
            .iter()
            .map(|&mode| {
                let c = ExperimentConfig { mode, ..cfg.clone() };
                let dir = out.join(mode.as_str());
                let (train, val) = (&train, val.as_ref());
                scope.spawn(move || run(&c, &dir, train, val))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("training thread panicked")).collect()
    });
    for (mode, r) in modes.iter().zip(results) {
        r.with_context(|| format!("run {mode} failed"))?;
    }
    Ok(())
}
