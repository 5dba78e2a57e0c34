use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use chrono::{SecondsFormat, Utc};
use serde::Serialize;

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Record of one run; `files` lists every artifact relative to `output_dir`.
#[derive(Debug, Serialize)]
pub struct RunManifest<C: Serialize> {
    pub command: String,
    pub config: C,
    pub seed: u64,
    pub code_version: String,
    pub output_dir: PathBuf,
    pub started: String,
    pub finished: String,
    pub files: Vec<String>,
}

impl<C: Serialize> RunManifest<C> {
    pub fn new(command: &str, config: C, seed: u64, output_dir: &Path) -> Self {
        RunManifest {
            command: command.to_string(),
            config,
            seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
            output_dir: output_dir.to_path_buf(),
            started: now(),
            finished: String::new(),
            files: Vec::new(),
        }
    }

    pub fn add(&mut self, file: impl Into<String>) {
        self.files.push(file.into());
    }

    /// Stamps the end time and writes `manifest.json` into the output directory.
    pub fn finish(mut self) -> Result<PathBuf> {
        self.finished = now();
        let path = self.output_dir.join("manifest.json");
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
