//! Run configuration file.

use std::path::{Path, PathBuf};

use hafuse::metrics::NoiseSpec;
use hafuse::nn::{DetailedConfig, GeneratorConfig, SalientConfig};
use hafuse::train::{NetworkConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::exit::{CliError, CliResult};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
}

/// Everything a run needs, one table per component. Missing keys take the
/// library defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub generator: GeneratorConfig,
    pub salient: SalientConfig,
    pub detailed: DetailedConfig,
    pub noise: NoiseSpec,
    pub paths: Paths,
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| CliError::usage(format!("{}: {e}", path.display())))
    }

    pub fn parse(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load_or_default(path: Option<&Path>) -> CliResult<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    /// Scaled-down settings for quick runs on 32×32 data.
    pub fn smoke() -> Self {
        let mut c = RunConfig::default();
        c.generator.scales = 2;
        c.train.epochs = 2;
        c.train.batch_size = 2;
        c.train.patch_size = 32;
        c
    }

    pub fn networks(&self) -> NetworkConfig {
        NetworkConfig {
            generator: self.generator.clone(),
            salient: self.salient.clone(),
            detailed: self.detailed.clone(),
        }
    }

    pub fn set_networks(&mut self, nets: NetworkConfig) {
        self.generator = nets.generator;
        self.salient = nets.salient;
        self.detailed = nets.detailed;
    }
}
