//! The merged configuration file: `[model]`, `[train]`, `[mask]` and
//! `[scene]` tables, each optional and each rejecting unknown keys.

use std::path::Path;

use kansam::data::SceneConfig;
use kansam::masking::MaskConfig;
use kansam::model::ModelConfig;
use kansam::train::TrainConfig;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Overrides `train.mask` when present.
    pub mask: Option<MaskConfig>,
    pub scene: SceneConfig,
}

impl CliConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg: CliConfig = toml::from_str(text).map_err(|e| CliError::Usage(format!("config: {e}")))?;
        if let Some(mask) = cfg.mask.take() {
            cfg.train.mask = mask;
        }
        Ok(cfg)
    }

    /// Defaults when `path` is `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(CliConfig::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Core(kansam::Error::Io { path: p.to_path_buf(), source: e }))?;
                Self::parse(&text)
            }
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate()?;
        self.train.validate()?;
        self.scene.validate()?;
        Ok(())
    }

    /// The resolved configuration as TOML, `[mask]` folded into `[train]`.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration always serializes")
    }
}
