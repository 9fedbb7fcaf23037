//! Experiment configuration, read from TOML.

use std::path::{Path, PathBuf};

use fedser_core::data::{PartitionConfig, SynthSpec};
use fedser_core::features::FeatureConfig;
use fedser_core::federation::FederationConfig;
use fedser_core::model::ArchConfig;
use fedser_core::selftrain::SelfTrainConfig;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::read_to_string;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SynthSpec),
    Manifest {
        path: PathBuf,
        #[serde(default)]
        permissive: bool,
        #[serde(default)]
        classes: Option<Vec<String>>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub trials: usize,
    /// One seed per trial; defaults to `0..trials`.
    pub seeds: Option<Vec<u64>>,
    /// Folds to run; all folds when absent.
    pub folds: Option<Vec<usize>>,
    pub output_dir: PathBuf,
    /// Worker threads for device updates; 0 picks the machine's core count.
    pub workers: usize,
    /// Write the global model every this many rounds (0: final model only).
    pub checkpoint_every: u32,
    pub data: DataSource,
    pub features: FeatureConfig,
    pub arch: ArchConfig,
    pub partition: PartitionConfig,
    pub federation: FederationConfig,
    pub selftrain: SelfTrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            trials: 5,
            seeds: None,
            folds: None,
            output_dir: PathBuf::from("runs/experiment"),
            workers: 0,
            checkpoint_every: 0,
            data: DataSource::default(),
            features: FeatureConfig::default(),
            arch: ArchConfig::default(),
            partition: PartitionConfig::default(),
            federation: FederationConfig::default(),
            selftrain: SelfTrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// Reads a TOML config. A relative manifest path is taken relative to
    /// the config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let mut cfg: Self = toml::from_str(&text).map_err(|source| Error::Toml {
            path: path.into(),
            source,
        })?;
        if let DataSource::Manifest { path: m, .. } = &mut cfg.data {
            if m.is_relative() {
                *m = path.parent().unwrap_or(Path::new("")).join(&*m);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }

    pub fn seeds(&self) -> Vec<u64> {
        self.seeds
            .clone()
            .unwrap_or_else(|| (0..self.trials as u64).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::Config("trials must be >= 1".into()));
        }
        if let Some(s) = &self.seeds {
            if s.len() != self.trials {
                return Err(Error::Config(format!(
                    "{} seeds for {} trials",
                    s.len(),
                    self.trials
                )));
            }
        }
        self.features.validate()?;
        self.arch.validate()?;
        self.partition.validate()?;
        self.federation.validate()?;
        self.selftrain.validate()?;
        Ok(())
    }
}
