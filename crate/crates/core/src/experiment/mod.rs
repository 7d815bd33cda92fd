//! Experiment files, the training loop, the persistent run store, sweeps and
//! reports.

mod report;
mod store;
mod sweep;
mod train;

pub use report::{write_report, ReportSummary};
pub use store::{RunStore, StoredRun};
pub use sweep::{run_sweep, SweepOutcome};
pub use train::{evaluate, load_dataset, train, CurvePoint, TrainOutcome};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{AugmentConfig, SynthSpec};
use crate::error::{Error, Result};
use crate::models::{canonical_config, scaled_config, ModelConfig, ScaleSpec};
use crate::optim::OptimConfig;

/// Either a canonical name (optionally rescaled) or a full inline config.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<ScaleSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<ModelConfig>,
}

impl ModelSection {
    pub fn canonical(name: impl Into<String>, scale: Option<ScaleSpec>) -> Self {
        Self { canonical: Some(name.into()), scale, config: None }
    }

    /// Expands to a full config.
    pub fn resolve(&self) -> Result<ModelConfig> {
        let cfg = match (&self.canonical, &self.config) {
            (Some(name), None) => {
                let base = canonical_config(name)?;
                match &self.scale {
                    Some(s) => scaled_config(&base, s)?,
                    None => base,
                }
            }
            (None, Some(cfg)) if self.scale.is_none() => cfg.clone(),
            _ => {
                return Err(Error::Config(
                    "model section needs exactly one of `canonical` (with optional `scale`) or `config`".into(),
                ))
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSpec {
    Synthetic(SynthSpec),
    Directory {
        path: PathBuf,
        image_size: usize,
        #[serde(default = "default_val_fraction")]
        val_fraction: f64,
        #[serde(default)]
        seed: u64,
    },
}

fn default_val_fraction() -> f64 {
    0.2
}

impl DatasetSpec {
    pub fn image_size(&self) -> usize {
        match self {
            DatasetSpec::Synthetic(s) => s.image_size,
            DatasetSpec::Directory { image_size, .. } => *image_size,
        }
    }
}

fn default_eval_every() -> usize {
    1
}

/// A training run as written in a TOML file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    pub seed: u64,
    pub epochs: usize,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Report EMA weights as the headline error instead of the raw weights.
    #[serde(default)]
    pub eval_ema: bool,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub model: ModelSection,
    pub optim: OptimConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    pub dataset: DatasetSpec,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        // Relative dataset paths are taken from the config file's location.
        if let DatasetSpec::Directory { path: data, .. } = &mut cfg.dataset {
            if data.is_relative() {
                if let Some(parent) = path.parent() {
                    *data = parent.join(&*data);
                }
            }
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    /// Expands the model to a full inline config, fills the schedule length
    /// from `epochs`, and checks every section.
    pub fn resolved(&self) -> Result<Self> {
        let mut out = self.clone();
        let model = self.model.resolve()?;
        out.model = ModelSection { canonical: None, scale: None, config: Some(model) };
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be positive".into()));
        }
        let epochs = self.epochs as f64;
        if out.optim.total_epochs == 0.0 {
            out.optim.total_epochs = epochs;
        } else if out.optim.total_epochs != epochs {
            return Err(Error::Config(format!(
                "optim.total_epochs ({}) disagrees with epochs ({})",
                out.optim.total_epochs, self.epochs
            )));
        }
        out.optim.validate()?;
        out.augment.validate()?;
        Ok(out)
    }

    /// Full model config; only meaningful after [`resolved`](Self::resolved).
    pub fn model_config(&self) -> Result<ModelConfig> {
        self.model.resolve()
    }

    /// Overrides seed and run length, keeping the schedule consistent.
    pub fn with_overrides(mut self, seed: Option<u64>, epochs: Option<usize>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(e) = epochs {
            self.epochs = e;
            self.optim.total_epochs = 0.0;
            self.optim.warmup_epochs = self.optim.warmup_epochs.min(e as f64 / 4.0);
        }
        self
    }
}
