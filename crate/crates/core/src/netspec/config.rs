use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Mode {
    /// Exact back-propagation with the softmax baseline loss.
    #[serde(rename = "BP")]
    Bp,
    /// Exact back-propagation with the hinge loss.
    #[serde(rename = "BP-H")]
    BpH,
    #[serde(rename = "FRFB")]
    Frfb,
    #[serde(rename = "URFB")]
    Urfb,
}

/// How feedback weights are used and updated; the loss is chosen separately.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FeedbackRule {
    Bp,
    Frfb,
    Urfb,
}

impl Mode {
    pub fn rule(self) -> FeedbackRule {
        match self {
            Mode::Bp | Mode::BpH => FeedbackRule::Bp,
            Mode::Frfb => FeedbackRule::Frfb,
            Mode::Urfb => FeedbackRule::Urfb,
        }
    }

    pub fn default_loss(self) -> LossKind {
        match self {
            Mode::Bp => LossKind::SoftmaxXent,
            _ => LossKind::Hinge,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Bp => "BP",
            Mode::BpH => "BP-H",
            Mode::Frfb => "FRFB",
            Mode::Urfb => "URFB",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "BP" => Ok(Mode::Bp),
            "BP-H" | "BPH" | "BP_H" => Ok(Mode::BpH),
            "FRFB" => Ok(Mode::Frfb),
            "URFB" => Ok(Mode::Urfb),
            _ => Err(format!("unknown mode `{s}` (expected BP, BP-H, FRFB or URFB)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum LossKind {
    #[serde(rename = "hinge")]
    Hinge,
    #[serde(rename = "softmax-xent")]
    SoftmaxXent,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Hinge => "hinge",
            LossKind::SoftmaxXent => "softmax-xent",
        })
    }
}

impl FromStr for LossKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "hinge" => Ok(LossKind::Hinge),
            "softmax-xent" | "softmax" | "xent" => Ok(LossKind::SoftmaxXent),
            _ => Err(format!("unknown loss `{s}` (expected hinge or softmax-xent)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DatasetKind {
    #[serde(rename = "cifar10")]
    Cifar10,
    #[serde(rename = "cifar100")]
    Cifar100,
    #[serde(rename = "mnist")]
    Mnist,
    #[serde(rename = "blobs")]
    Blobs,
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetKind::Cifar10 => "cifar10",
            DatasetKind::Cifar100 => "cifar100",
            DatasetKind::Mnist => "mnist",
            DatasetKind::Blobs => "blobs",
        })
    }
}

impl FromStr for DatasetKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "cifar10" => Ok(DatasetKind::Cifar10),
            "cifar100" => Ok(DatasetKind::Cifar100),
            "mnist" => Ok(DatasetKind::Mnist),
            "blobs" | "toy" | "toyblobs" => Ok(DatasetKind::Blobs),
            _ => Err(format!("unknown dataset `{s}`")),
        }
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected key=value, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub mode: Mode,
    /// `None` means the mode's default loss.
    pub loss: Option<LossKind>,
    pub eta: f64,
    pub mu: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub connectivity: f64,
    pub seed: u64,
    pub untied: bool,
    pub dataset: DatasetKind,
    pub data_dir: Option<PathBuf>,
    pub val_size: usize,
    /// Training images kept after removing the validation split; 0 keeps all.
    pub train_size: usize,
    /// Architecture text or preset name.
    pub arch: String,
    /// Write a checkpoint every this many epochs; 0 writes only the final one.
    pub checkpoint_every: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            mode: Mode::Urfb,
            loss: None,
            eta: 0.1,
            mu: 1.0,
            batch_size: 500,
            epochs: 10,
            connectivity: 1.0,
            seed: 0,
            untied: false,
            dataset: DatasetKind::Cifar10,
            data_dir: None,
            val_size: 5000,
            train_size: 0,
            arch: "simpnet".to_string(),
            checkpoint_every: 0,
        }
    }
}

pub const CONFIG_KEYS: &[&str] = &[
    "mode",
    "loss",
    "eta",
    "mu",
    "batch_size",
    "epochs",
    "connectivity",
    "seed",
    "untied",
    "dataset",
    "data_dir",
    "val_size",
    "train_size",
    "arch",
    "checkpoint_every",
];

fn invalid(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key: key.to_string(),
        reason: reason.into(),
    }
}

fn number<T: FromStr>(key: &str, value: &str) -> Result<T, ConfigError> {
    value
        .trim()
        .parse()
        .map_err(|_| invalid(key, format!("cannot parse `{value}`")))
}

fn real(key: &str, value: &str) -> Result<f64, ConfigError> {
    let v: f64 = number(key, value)?;
    if !v.is_finite() {
        return Err(invalid(key, "must be finite"));
    }
    Ok(v)
}

impl ExperimentConfig {
    pub fn effective_loss(&self) -> LossKind {
        self.loss.unwrap_or_else(|| self.mode.default_loss())
    }

    /// Set one key from its textual value, checking the key's own range.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let key = key.trim();
        let v = value.trim();
        match key {
            "mode" => self.mode = v.parse().map_err(|e| invalid(key, e))?,
            "loss" => self.loss = Some(v.parse().map_err(|e| invalid(key, e))?),
            "eta" => {
                let x = real(key, v)?;
                if x <= 0.0 {
                    return Err(invalid(key, "must be > 0"));
                }
                self.eta = x;
            }
            "mu" => {
                let x = real(key, v)?;
                if x <= 0.0 {
                    return Err(invalid(key, "must be > 0"));
                }
                self.mu = x;
            }
            "connectivity" => {
                let x = real(key, v)?;
                if !(x > 0.0 && x <= 1.0) {
                    return Err(invalid(key, "must lie in (0, 1]"));
                }
                self.connectivity = x;
            }
            "batch_size" => {
                let n: usize = number(key, v)?;
                if n == 0 {
                    return Err(invalid(key, "must be >= 1"));
                }
                self.batch_size = n;
            }
            "epochs" => self.epochs = number(key, v)?,
            "seed" => self.seed = number(key, v)?,
            "untied" => {
                self.untied = match v.to_ascii_lowercase().as_str() {
                    "1" | "true" | "yes" | "on" => true,
                    "0" | "false" | "no" | "off" => false,
                    _ => return Err(invalid(key, format!("expected a boolean, got `{v}`"))),
                }
            }
            "dataset" => self.dataset = v.parse().map_err(|e| invalid(key, e))?,
            "data_dir" => self.data_dir = Some(PathBuf::from(v)).filter(|p| !p.as_os_str().is_empty()),
            "val_size" => self.val_size = number(key, v)?,
            "train_size" => self.train_size = number(key, v)?,
            "arch" => {
                if v.is_empty() {
                    return Err(invalid(key, "empty architecture"));
                }
                self.arch = v.to_string();
            }
            "checkpoint_every" => self.checkpoint_every = number(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }
}

/// Parse `key=value` lines; `#` starts a comment, blank lines are ignored.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let mut cfg = ExperimentConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(p) => &raw[..p],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line: i + 1,
            text: raw.to_string(),
        })?;
        cfg.set(k, v)?;
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}
