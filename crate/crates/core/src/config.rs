//! Operator configuration. A snapshot is written at the head of every session log.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::supervisor::SupervisorMode;
use crate::uncertainty::UncertaintyConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config: {0}")]
    Parse(String),
    #[error("config: {0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Thresholds {
    pub tau_act: f64,
    pub tau_entity: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ensemble {
    pub samples: usize,
    pub dropout_rate: f64,
    pub seed: u64,
}

/// Optional model and data files. Missing entries fall back to the shipped defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub classifier: Option<PathBuf>,
    pub scorer: Option<PathBuf>,
    pub templates: Option<PathBuf>,
    pub scenario: Option<PathBuf>,
    pub survey: Option<PathBuf>,
    pub log_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Server {
    pub bind: String,
    pub port: u16,
    pub supervisor_token: String,
    pub supervisor_mode: SupervisorMode,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub thresholds: Thresholds,
    pub ensemble: Ensemble,
    pub paths: Paths,
    pub server: Server,
}

impl Default for Thresholds {
    fn default() -> Self {
        let u = UncertaintyConfig::default();
        Self { tau_act: u.tau_act, tau_entity: u.tau_entity }
    }
}

impl Default for Ensemble {
    fn default() -> Self {
        let u = UncertaintyConfig::default();
        Self { samples: u.sample_count, dropout_rate: u.dropout_rate, seed: u.seed }
    }
}

impl Default for Server {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            port: 8080,
            supervisor_token: "supervisor".into(),
            supervisor_mode: SupervisorMode::Single,
        }
    }
}

impl Config {
    pub fn from_json(s: &str) -> Result<Self, ConfigError> {
        let cfg: Config = serde_json::from_str(s).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn uncertainty(&self) -> UncertaintyConfig {
        UncertaintyConfig {
            sample_count: self.ensemble.samples,
            dropout_rate: self.ensemble.dropout_rate,
            tau_act: self.thresholds.tau_act,
            tau_entity: self.thresholds.tau_entity,
            seed: self.ensemble.seed,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.uncertainty().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.server.supervisor_token.is_empty() {
            return Err(ConfigError::Invalid("supervisor token must not be empty".into()));
        }
        Ok(())
    }
}
