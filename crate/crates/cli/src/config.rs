//! File-backed run configuration: one TOML file per run, schema-validated
//! with explicit field paths in every error.

use std::path::Path;

use anyhow::{Context, Result};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use attentrack_core::model::ModelConfig;
use attentrack_core::simworld::ScenarioConfig;
use attentrack_core::train::{TrainConfig, TrainStage};
use attentrack_core::Error;

/// Reads and parses a TOML config. Unknown or ill-typed fields surface the
/// exact path and location from the parser.
pub fn load<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| {
        Error::config("config", format!("cannot read {}: {e}", path.display()))
    })?;
    let value = toml::from_str(&text)
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    Ok(value)
}

/// Prefixes the field path of a nested section's validation error.
fn nest(section: &str, err: Error) -> Error {
    match err {
        Error::Config { field, reason } => Error::Config {
            field: format!("{section}.{field}"),
            reason,
        },
        other => other,
    }
}

/// Config for `gen`: how many scenarios, and the world parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenFileConfig {
    /// Scenarios to generate; scenario `i` uses seed `base_seed + i`.
    pub count: usize,
    pub scenario: ScenarioConfig,
}

impl Default for GenFileConfig {
    fn default() -> Self {
        GenFileConfig {
            count: 1,
            scenario: ScenarioConfig::default(),
        }
    }
}

impl GenFileConfig {
    pub fn validate(&self) -> Result<()> {
        if self.count == 0 {
            return Err(Error::config("count", "must be positive").into());
        }
        self.scenario.validate().map_err(|e| nest("scenario", e))?;
        Ok(())
    }
}

/// Config for `train`: which stage, the architecture (used when starting
/// fresh), and the optimizer schedule.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainFileConfig {
    /// `encoder`, `association`, or `joint`.
    pub stage: String,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
}

impl TrainFileConfig {
    pub fn validate(&self) -> Result<TrainStage> {
        let stage: TrainStage = self.stage.parse()?;
        self.model.validate().map_err(|e| nest("model", e))?;
        self.train.validate().map_err(|e| nest("train", e))?;
        Ok(stage)
    }
}

/// Config for `track` when running a freshly initialized model.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackFileConfig {
    pub model: ModelConfig,
}

impl TrackFileConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| nest("model", e))?;
        Ok(())
    }
}

/// Held-out benchmark shape for `ablate`. Evaluation scene `i` uses seed
/// `base_seed + i` over the `[scenario]` world with `frames` frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateEvalConfig {
    pub scenarios: usize,
    pub frames: usize,
    pub n_points: usize,
    pub match_threshold_m: f64,
}

impl Default for AblateEvalConfig {
    fn default() -> Self {
        AblateEvalConfig {
            scenarios: 16,
            frames: 40,
            n_points: 40,
            match_threshold_m: 2.0,
        }
    }
}

/// Config for `ablate`: the benchmark world both arms are scored on.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateFileConfig {
    pub scenario: ScenarioConfig,
    pub eval: AblateEvalConfig,
}

impl AblateFileConfig {
    pub fn validate(&self) -> Result<()> {
        self.scenario.validate().map_err(|e| nest("scenario", e))?;
        if self.eval.scenarios == 0 {
            return Err(Error::config("eval.scenarios", "must be positive").into());
        }
        if self.eval.frames < 2 {
            return Err(Error::config("eval.frames", "must be at least 2").into());
        }
        Ok(())
    }
}

/// Reads a checkpoint file, mapping missing files to data errors.
pub fn load_checkpoint(path: &Path) -> Result<attentrack_core::train::Checkpoint> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::data(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let ck = attentrack_core::train::Checkpoint::from_json(&text)
        .with_context(|| format!("checkpoint {}", path.display()))?;
    Ok(ck)
}
