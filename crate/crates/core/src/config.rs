//! Experiment configuration: one TOML file fully describes a run.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attacks::AttackConfig;
use crate::data::dataset::hex;
use crate::data::DatasetConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::regularizer::DispWeights;
use crate::trainer::{OptimizerConfig, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    /// Output channels of each convolution; the last one is the bottleneck width.
    #[serde(default = "d_widths")]
    pub widths: Vec<usize>,
    #[serde(default = "d_kernel")]
    pub kernel: usize,
    #[serde(default)]
    pub classifier_hidden: Vec<usize>,
    #[serde(default = "d_targets")]
    pub num_targets: usize,
}

fn d_widths() -> Vec<usize> {
    vec![16, 32, 64, 64]
}
fn d_kernel() -> usize {
    7
}
fn d_targets() -> usize {
    10
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            widths: d_widths(),
            kernel: d_kernel(),
            classifier_hidden: Vec::new(),
            num_targets: d_targets(),
        }
    }
}

impl ModelSection {
    pub fn model_config(&self, input_shape: [usize; 3]) -> ModelConfig {
        let mut m = ModelConfig::with_widths(input_shape, &self.widths, self.kernel, self.num_targets);
        m.classifier_hidden = self.classifier_hidden.clone();
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispSection {
    #[serde(default)]
    pub gamma_mem: f64,
    #[serde(default)]
    pub gamma_batch: f64,
    #[serde(default = "d_eta")]
    pub eta: f64,
    #[serde(default = "d_beta")]
    pub beta: f64,
}

fn d_eta() -> f64 {
    1.0
}
fn d_beta() -> f64 {
    0.1
}

impl Default for DispSection {
    fn default() -> Self {
        DispSection {
            gamma_mem: 0.0,
            gamma_batch: 0.0,
            eta: d_eta(),
            beta: d_beta(),
        }
    }
}

impl DispSection {
    pub fn weights(&self) -> DispWeights {
        DispWeights {
            gamma_mem: self.gamma_mem,
            gamma_batch: self.gamma_batch,
            eta: self.eta,
        }
    }
}

/// Which checkpoint of a run feeds feature export, attacks and summaries.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// The model after the final epoch.
    #[default]
    Last,
    /// The epoch with the lowest validation loss.
    BestVal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed of the first repeat; repeat `r` uses `seed + r`.
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "d_repeats")]
    pub repeats: usize,
    /// Root of all artifacts; not part of the config hash.
    #[serde(default = "d_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub selection: Selection,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub model: ModelSection,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub disp: DispSection,
    #[serde(default)]
    pub attack: AttackConfig,
}

fn d_repeats() -> usize {
    1
}
fn d_out() -> PathBuf {
    PathBuf::from("runs")
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.dataset.validate()?;
        self.optimizer.validate()?;
        self.disp.weights().validate()?;
        if !(self.disp.beta > 0.0 && self.disp.beta <= 1.0) {
            return Err(Error::Config(format!("disp.beta must lie in (0, 1], got {}", self.disp.beta)));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        self.attack.validate()?;
        let shape = self.input_shape_hint();
        self.model.model_config(shape).validate()
    }

    /// MNIST input shape implied by the dataset section.
    pub fn input_shape_hint(&self) -> [usize; 3] {
        if self.dataset.downscale {
            [3, 14, 14]
        } else {
            [3, 28, 28]
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            optimizer: self.optimizer.clone(),
            weights: self.disp.weights(),
            beta: self.disp.beta,
        }
    }

    /// Identity of the run: SHA-256 of the canonical JSON with the locations
    /// (`out_dir`, `dataset.mnist_dir`) removed, cut to 16 hex digits.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.dataset.mnist_dir = None;
        short_hash(&serde_json::to_vec(&c).expect("config serializes"))
    }

    /// Identity of the dataset section alone.
    pub fn dataset_hash(&self) -> String {
        let mut d = self.dataset.clone();
        d.mnist_dir = None;
        short_hash(&serde_json::to_vec(&d).expect("dataset config serializes"))
    }

    pub fn run_root(&self) -> PathBuf {
        self.out_dir.join(self.hash())
    }

    pub fn dataset_dir(&self) -> PathBuf {
        self.out_dir.join(format!("dataset-{}", self.dataset_hash()))
    }

    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repeats as u64).map(|r| self.seed + r).collect()
    }

    /// The same experiment with different DisP weights.
    pub fn with_gammas(&self, gamma_mem: f64, gamma_batch: f64) -> Self {
        let mut c = self.clone();
        c.disp.gamma_mem = gamma_mem;
        c.disp.gamma_batch = gamma_batch;
        c
    }
}

fn short_hash(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes)[..8])
}
