use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

/// Provenance record written as `run.json` into every output directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<PathBuf>,
    pub inputs: Vec<PathBuf>,
    pub output: PathBuf,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub started: DateTime<Utc>,
    pub finished: Option<DateTime<Utc>>,
}

impl RunManifest {
    pub fn start(command: &str, config_path: Option<&Path>, output: &Path) -> Self {
        Self {
            command: command.to_string(),
            config_path: config_path.map(Path::to_path_buf),
            inputs: Vec::new(),
            output: output.to_path_buf(),
            seed: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            started: Utc::now(),
            finished: None,
        }
    }

    pub fn input(mut self, p: &Path) -> Self {
        self.inputs.push(p.to_path_buf());
        self
    }

    pub fn finish(mut self) -> anyhow::Result<()> {
        self.finished = Some(Utc::now());
        fs::create_dir_all(&self.output)?;
        let path = self.output.join("run.json");
        let mut text = serde_json::to_string_pretty(&self)?;
        text.push('\n');
        fs::write(&path, text).map_err(|e| pmquant::Error::Io { path, source: e })?;
        Ok(())
    }
}
