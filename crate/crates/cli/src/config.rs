//! Run configuration file (TOML). Every field has a default, so an empty
//! file reproduces the published training protocol.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use pmquant::datapipe::PreprocessConfig;
use pmquant::synthgen::SynthSpec;
use pmquant::{ModelConfig, QuantileSpec, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::UsageError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub samples: usize,
    pub split_ratio: f64,
    #[serde(flatten)]
    pub spec: SynthSpec,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { samples: 200, split_ratio: 0.8, spec: SynthSpec::default() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Prepared dataset used by `train` and `evaluate`.
    pub dataset: Option<PathBuf>,
    pub preprocess: Option<PreprocessConfig>,
    pub synthetic: Option<SyntheticConfig>,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

/// Command-line overrides shared by several subcommands.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub quantiles: Option<(f64, f64)>,
    pub alpha: Option<f64>,
    pub epochs: Option<usize>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = fs::read_to_string(path).map_err(|e| pmquant::Error::Io { path: path.to_path_buf(), source: e })?;
        let mut cfg: RunConfig = toml::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
        // Relative paths inside the file are relative to the file.
        let base = path.parent().unwrap_or(Path::new("."));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(d) = cfg.dataset.as_mut() {
            rebase(d);
        }
        if let Some(p) = cfg.preprocess.as_mut() {
            rebase(&mut p.scene_dir);
            rebase(&mut p.truth_dir);
        }
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) -> anyhow::Result<()> {
        if let Some(seed) = o.seed {
            self.train.seed = seed;
            if let Some(p) = self.preprocess.as_mut() {
                p.seed = seed;
            }
            if let Some(s) = self.synthetic.as_mut() {
                s.spec.seed = seed;
            }
        }
        if let Some((lower, upper)) = o.quantiles {
            let q = QuantileSpec::new(lower, upper).map_err(|e| UsageError(format!("--quantiles: {e}")))?;
            self.train.loss.quantiles = q;
            self.model.quantiles = q;
            if let Some(s) = self.synthetic.as_mut() {
                s.spec.quantiles = q;
            }
        }
        if let Some(alpha) = o.alpha {
            self.train.loss.alpha = alpha;
        }
        if let Some(epochs) = o.epochs {
            self.train.epochs = epochs;
        }
        // Keep the two copies of the quantile levels in agreement.
        self.model.quantiles = self.train.loss.quantiles;
        self.model.dropout_rate = self.train.dropout;
        self.train.validate().map_err(|e| UsageError(e.to_string()))?;
        Ok(())
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        toml::to_string_pretty(self).context("serializing configuration")
    }
}

pub fn parse_quantiles(s: &str) -> Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected LOWER,UPPER")?;
    let lower: f64 = a.trim().parse().map_err(|_| format!("bad lower quantile `{a}`"))?;
    let upper: f64 = b.trim().parse().map_err(|_| format!("bad upper quantile `{b}`"))?;
    Ok((lower, upper))
}
