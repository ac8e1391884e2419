//! TOML configuration file.
//!
//! ```toml
//! [slam]
//! sigma_lc = 0.3
//! n_lc = 10
//!
//! [scenario]
//! trajectory = "corridor-loop"
//! length = 40
//! laps = 2
//!
//! [mc]
//! sweep = "bias"
//! values = [0.0, 0.005, 0.01]
//! runs = 20
//! seed = 7
//! ```
//!
//! `[slam]` keys are the filter parameter names and `[scenario]` keys the
//! scenario parameter names accepted by `--param` and `--scenario-param`.

use std::path::Path;

use serde::Deserialize;

use crate::params::SlamParams;
use crate::simworld::ScenarioSpec;

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSection {
    pub sweep: Option<String>,
    pub values: Option<Vec<f64>>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub slam: toml::Table,
    #[serde(default)]
    pub scenario: toml::Table,
    #[serde(default)]
    pub mc: McSection,
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Syntax { path: String, message: String },
    #[error("[{table}] {key}: {message}")]
    Value { table: &'static str, key: String, message: String },
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: display.clone(), source })?;
        toml::from_str(&text).map_err(|e| ConfigError::Syntax { path: display, message: e.to_string() })
    }

    pub fn apply_slam(&self, params: &mut SlamParams) -> Result<(), ConfigError> {
        for (key, value) in entries(&self.slam, "slam")? {
            params.set(&key, &value).map_err(|e| ConfigError::Value {
                table: "slam",
                key: key.clone(),
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    pub fn apply_scenario(&self, spec: &mut ScenarioSpec) -> Result<(), ConfigError> {
        for (key, value) in entries(&self.scenario, "scenario")? {
            spec.set(&key, &value).map_err(|e| ConfigError::Value {
                table: "scenario",
                key: key.clone(),
                message: e.to_string(),
            })?;
        }
        Ok(())
    }
}

/// Flattens a table to `(key, text)` pairs. Keys that pick the trajectory
/// shape come first so that shape dimensions apply to the chosen shape.
fn entries(table: &toml::Table, name: &'static str) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::with_capacity(table.len());
    for (key, value) in table {
        let text = match value {
            toml::Value::String(s) => s.clone(),
            toml::Value::Integer(i) => i.to_string(),
            toml::Value::Float(f) => f.to_string(),
            toml::Value::Boolean(b) => b.to_string(),
            _ => {
                return Err(ConfigError::Value {
                    table: name,
                    key: key.clone(),
                    message: "expected a string or number".into(),
                })
            }
        };
        out.push((key.clone(), text));
    }
    out.sort_by_key(|(k, _)| match k.as_str() {
        "waypoints" => 0,
        "trajectory" => 1,
        _ => 2,
    });
    Ok(out)
}
