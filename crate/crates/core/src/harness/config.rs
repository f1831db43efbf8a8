use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::dataset::Split;
use crate::error::{Error, Result};
use crate::losses::{LossKind, DEFAULT_TAU_EPS};
use crate::model::ClimatConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 32,
            epochs: 20,
        }
    }
}

/// Quantization range of one numerical clinical variable, taken from the
/// training split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub model: ClimatConfig,
    pub optimizer: OptimizerConfig,
    pub loss: LossKind,
    pub tau_eps: f64,
    /// Adds CE on the radiologist's diagnosis logits.
    pub diagnosis_ce: bool,
    pub seed: u64,
    /// Filled in by training; `None` entries are categorical variables.
    pub clinical_ranges: Option<Vec<Option<Range>>>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            dataset: PathBuf::from("data"),
            out: PathBuf::from("runs/default"),
            model: ClimatConfig::default(),
            optimizer: OptimizerConfig::default(),
            loss: LossKind::Club,
            tau_eps: DEFAULT_TAU_EPS,
            diagnosis_ce: false,
            seed: 0,
            clinical_ranges: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let o = &self.optimizer;
        if !(o.lr > 0.0) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", o.lr)));
        }
        if o.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) || !(o.eps > 0.0) {
            return Err(Error::Config("Adam needs beta in [0, 1) and eps > 0".into()));
        }
        if !(self.tau_eps > 0.0) {
            return Err(Error::Config("tau_eps must be positive".into()));
        }
        if let LossKind::Focal { gamma } = self.loss {
            if !(gamma >= 0.0) {
                return Err(Error::Config("focal gamma must be non-negative".into()));
            }
        }
        self.model.validate()
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        read_json(path)
    }
}

/// Input of the `eval` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoint: PathBuf,
    /// Defaults to the dataset recorded in the checkpoint.
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    #[serde(default = "default_split")]
    pub split: Split,
}

fn default_split() -> Split {
    Split::Val
}

/// Input of the `attn` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttentionConfig {
    pub checkpoint: PathBuf,
    #[serde(default)]
    pub dataset: Option<PathBuf>,
    pub subject: String,
    #[serde(default)]
    pub horizon: usize,
}

/// Reads any JSON configuration file.
pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}
