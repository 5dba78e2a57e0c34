mod align;
mod checkpoint;
mod circuit;
mod lindyn;
mod manifest;
mod plot;
mod train;

use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use urfb_core::netspec::{load_config, ExperimentConfig, Mode, CONFIG_KEYS};

#[derive(Parser)]
#[command(name = "urfb", version, about = "Random feedback training experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network. Any config key can be overridden as `--key=value`;
    /// `--mode=BP,URFB,FRFB` runs a sweep into sibling directories.
    Train {
        /// `key=value` config file.
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs/train")]
        out: PathBuf,
    },
    /// Deep linear network dynamics under BP and random feedback.
    Lindyn {
        #[command(flatten)]
        args: lindyn::LindynArgs,
        #[arg(long, default_value = "runs/lindyn")]
        out: PathBuf,
    },
    /// Grid checks of the output-error and shutdown circuits.
    Circuit {
        #[command(flatten)]
        args: circuit::CircuitArgs,
        #[arg(long, default_value = "runs/circuit")]
        out: PathBuf,
    },
    /// Per-checkpoint, per-layer alignment of W and R^t.
    Align {
        dir: PathBuf,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Pulls `--key=value` config overrides out of a `train` command line.
fn split_overrides(args: Vec<String>) -> (Vec<String>, Vec<(String, String)>) {
    if args.get(1).map(String::as_str) != Some("train") {
        return (args, Vec::new());
    }
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        let kv = a
            .strip_prefix("--")
            .and_then(|s| s.split_once('='))
            .map(|(k, v)| (k.replace('-', "_"), v.to_string()))
            .filter(|(k, _)| CONFIG_KEYS.contains(&k.as_str()));
        match kv {
            Some(kv) => overrides.push(kv),
            None => rest.push(a),
        }
    }
    (rest, overrides)
}

fn train_config(path: Option<&PathBuf>, overrides: &[(String, String)]) -> Result<(ExperimentConfig, Vec<Mode>)> {
    let mut cfg = match path {
        Some(p) => load_config(p)?,
        None => ExperimentConfig::default(),
    };
    let mut modes = None;
    for (k, v) in overrides {
        if k == "mode" && v.contains(',') {
            let m: Vec<Mode> = v
                .split(',')
                .map(|s| s.parse().map_err(anyhow::Error::msg))
                .collect::<Result<_>>()
                .context("--mode")?;
            modes = Some(m);
        } else {
            cfg.set(k, v)?;
        }
    }
    let modes = modes.unwrap_or_else(|| vec![cfg.mode]);
    Ok((cfg, modes))
}

fn main() -> Result<()> {
    let (args, overrides) = split_overrides(std::env::args().collect());
    let cli = Cli::parse_from(args);
    match cli.command {
        Command::Train { config, out } => {
            let (cfg, modes) = train_config(config.as_ref(), &overrides)?;
            train::cmd_train(&cfg, &modes, &out)
        }
        Command::Lindyn { args, out } => lindyn::cmd_lindyn(&args, &out),
        Command::Circuit { args, out } => circuit::cmd_circuit(&args, &out),
        Command::Align { dir, out } => align::cmd_align(&dir, out.as_deref()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn overrides_are_split_from_train_args() {
        let (rest, ov) = split_overrides(argv("urfb train cfg.txt --out=x --mode=URFB --batch-size=50"));
        assert_eq!(rest, argv("urfb train cfg.txt --out=x"));
        assert_eq!(ov, vec![("mode".into(), "URFB".into()), ("batch_size".into(), "50".into())]);
        let (rest, ov) = split_overrides(argv("urfb lindyn --eps=1"));
        assert_eq!(rest, argv("urfb lindyn --eps=1"));
        assert!(ov.is_empty());
    }

    #[test]
    fn mode_list_becomes_a_sweep() {
        let ov = vec![("mode".to_string(), "BP,URFB,FRFB".to_string()), ("epochs".into(), "2".into())];
        let (cfg, modes) = train_config(None, &ov).unwrap();
        assert_eq!(modes, vec![Mode::Bp, Mode::Urfb, Mode::Frfb]);
        assert_eq!(cfg.epochs, 2);
        assert!(train_config(None, &[("eta".into(), "-1".into())]).is_err());
    }
}
