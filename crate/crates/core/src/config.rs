//! Experiment and action-catalog files, and named presets.
//!
//! Files are JSON. Parse failures report the offending field path together
//! with line and column.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::latency::{default_actions, ActionSpec};
use crate::policy::{PeriodicParams, PolicySpec, QuantileConfig, StaticParams, TwoPhaseConfig};
use crate::runner::{ExperimentConfig, Schedule};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config `{}`: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}:{column}: field `{field}`: {message}", path.display())]
    Parse {
        path: PathBuf,
        field: String,
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{}: {message}", path.display())]
    Invalid { path: PathBuf, message: String },
}

fn parse<T: DeserializeOwned>(path: &Path, text: &str) -> Result<T, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let field = err.path().to_string();
        let inner = err.into_inner();
        ConfigError::Parse {
            path: path.to_path_buf(),
            field,
            line: inner.line(),
            column: inner.column(),
            message: inner.to_string(),
        }
    })
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn parse_experiment(path: &Path, text: &str) -> Result<ExperimentConfig, ConfigError> {
    let cfg: ExperimentConfig = parse(path, text)?;
    cfg.validate().map_err(|e| ConfigError::Invalid {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(cfg)
}

pub fn load_experiment(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    parse_experiment(path, &read(path)?)
}

/// `{"actions": [...]}` on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionCatalog {
    pub actions: Vec<ActionSpec>,
}

impl Default for ActionCatalog {
    fn default() -> Self {
        Self {
            actions: default_actions(),
        }
    }
}

pub fn load_catalog(path: &Path) -> Result<ActionCatalog, ConfigError> {
    let catalog: ActionCatalog = parse(path, &read(path)?)?;
    for a in &catalog.actions {
        a.validate().map_err(|e| ConfigError::Invalid {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
    }
    Ok(catalog)
}

pub const PRESETS: &[&str] = &[
    "two-phase",
    "two-phase-24",
    "two-phase-cba",
    "static-60",
    "periodic-10",
    "quantile",
];

/// Named experiment setups. Twelve episodes mirror the main comparison,
/// twenty-four the long-horizon regime.
pub fn preset(name: &str) -> Option<ExperimentConfig> {
    let cfg = match name {
        "two-phase" => ExperimentConfig::new(PolicySpec::TwoPhase(TwoPhaseConfig::default()), 12),
        "two-phase-24" => ExperimentConfig::new(PolicySpec::TwoPhase(TwoPhaseConfig::default()), 24),
        "two-phase-cba" => {
            let mut cfg = ExperimentConfig::new(PolicySpec::TwoPhase(TwoPhaseConfig::default()), 24);
            cfg.schedule = Schedule::Explicit(vec!["C".into(), "B".into(), "A".into()]);
            cfg
        }
        "static-60" => ExperimentConfig::new(PolicySpec::Static(StaticParams { wait_s: 60.0 }), 24),
        "periodic-10" => ExperimentConfig::new(PolicySpec::Periodic(PeriodicParams { interval_s: 10.0 }), 12),
        "quantile" => ExperimentConfig::new(PolicySpec::Quantile(QuantileConfig::default()), 24),
        _ => return None,
    };
    Some(cfg)
}
