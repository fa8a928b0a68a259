//! Experiment configuration: one TOML document with a section per
//! component, plus `section.key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::scene::SceneGenConfig;
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Base seed of the synthetic splits.
    pub seed: u64,
    pub train_scenes: usize,
    pub probe_scenes: usize,
    pub test_scenes: usize,
    /// Annotated directory replacing the synthetic training split.
    pub train_dir: Option<PathBuf>,
    /// Annotated directory replacing the synthetic test split.
    pub test_dir: Option<PathBuf>,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            train_scenes: 200,
            probe_scenes: 16,
            test_scenes: 50,
            train_dir: None,
            test_dir: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Proposals with confidence above this count as predictions.
    pub threshold: f64,
    /// Fixed localization thresholds, pixels.
    pub sigmas: Vec<f64>,
    /// Also report the box-derived threshold when annotations carry boxes.
    pub box_sigma: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            sigmas: vec![4.0, 8.0],
            box_sigma: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Seed for initialization, data order, augmentation and auxiliary points.
    pub seed: u64,
    pub scene: SceneGenConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Self::from_value(parse_table(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    /// Loads `path` (or defaults) and applies `key=value` overrides.
    pub fn resolve(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                parse_table(&text)?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_value(table)
    }

    fn from_value(table: toml::Table) -> Result<Self> {
        let config: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.message().trim().to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.model.in_channels != self.scene.channels {
            return Err(Error::Config(format!(
                "model.in_channels ({}) differs from scene.channels ({})",
                self.model.in_channels, self.scene.channels
            )));
        }
        if !(self.eval.threshold > 0.0 && self.eval.threshold < 1.0) {
            return Err(Error::Config("eval.threshold must lie in (0, 1)".into()));
        }
        if self.eval.sigmas.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Config("eval.sigmas must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse::<toml::Table>()
        .map_err(|e| Error::Config(e.message().trim().to_string()))
}

/// Applies one `a.b.c=value` override. The value is read as a TOML literal
/// (`3`, `0.5`, `true`, `[4, 8]`, `"x"`) and falls back to a bare string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{spec}` is not of the form key=value")))?;
    let key = key.trim();
    let raw = raw.trim();
    let path: Vec<&str> = key.split('.').collect();
    if key.is_empty() || path.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("override `{spec}` has an empty key segment")));
    }
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override `{spec}`: `{p}` is not a section")))?;
    }
    cur.insert(last.to_string(), value);
    Ok(())
}
