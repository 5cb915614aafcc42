//! Named hyperparameter presets and JSON run configs layered on top of them.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};
use crate::hawkes::EventTerm;
use crate::train::TrainConfig;

pub const PRESETS: [&str; 5] = ["mimic", "memetracker", "retweet", "stackoverflow", "synthetic"];

#[allow(clippy::too_many_arguments)]
fn row(
    learning_rate: f64,
    dim_z: usize,
    likelihood_weight: f64,
    time_weight: f64,
    layers: usize,
    dim_h: usize,
    hidden: usize,
    batch_size: usize,
) -> TrainConfig {
    TrainConfig {
        learning_rate,
        weight_decay: 1e-5,
        batch_size,
        max_iter: 100,
        patience: 5,
        likelihood_weight,
        time_weight,
        dim_z,
        dim_h,
        layers,
        hidden,
        substeps_per_segment: 8,
        seed: 0,
        event_term: EventTerm::Total,
        workers: 1,
    }
}

/// Hyperparameters for a named dataset. `synthetic` is a small model sized
/// for the two-type Hawkes data produced by `generate`.
pub fn preset(name: &str) -> Result<TrainConfig> {
    Ok(match name {
        "mimic" => row(1e-3, 70, 0.1, 0.01, 6, 128, 90, 16),
        "memetracker" => row(1e-3, 70, 1e-4, 1e-4, 5, 64, 15, 512),
        "retweet" => row(5e-3, 80, 1e-4, 1e-4, 4, 16, 15, 128),
        "stackoverflow" => row(5e-3, 50, 1.0, 1e-2, 4, 32, 15, 16),
        "synthetic" => TrainConfig {
            max_iter: 30,
            substeps_per_segment: 4,
            ..row(5e-3, 8, 1.0, 0.01, 3, 8, 16, 16)
        },
        other => {
            return Err(Error::Config(format!(
                "unknown preset {other:?}; available: {}",
                PRESETS.join(", ")
            )))
        }
    })
}

/// A run config file: optional preset, data locations, and any
/// [`TrainConfig`] field as an override.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    /// Divides every timestamp on load.
    pub time_scale: f64,
    pub train: TrainConfig,
}

const RUN_KEYS: [&str; 4] = ["preset", "train_data", "test_data", "time_scale"];

impl RunConfig {
    /// Parses a config object. Relative data paths resolve against `base`.
    pub fn from_json_str(text: &str, base: Option<&Path>) -> Result<Self> {
        let value: Value = serde_json::from_str(text).map_err(|e| Error::Config(format!("config is not valid JSON: {e}")))?;
        let Value::Object(mut obj) = value else {
            return Err(Error::Config("config must be a JSON object".into()));
        };
        let preset_name = match obj.remove("preset") {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s),
            Some(other) => return Err(Error::Config(format!("preset must be a string, got {other}"))),
        };
        let path_of = |obj: &mut Map<String, Value>, key: &str| -> Result<Option<PathBuf>> {
            match obj.remove(key) {
                None | Some(Value::Null) => Ok(None),
                Some(Value::String(s)) => {
                    let p = PathBuf::from(s);
                    Ok(Some(match base {
                        Some(b) if p.is_relative() => b.join(p),
                        _ => p,
                    }))
                }
                Some(other) => Err(Error::Config(format!("{key} must be a path string, got {other}"))),
            }
        };
        let train_data = path_of(&mut obj, RUN_KEYS[1])?;
        let test_data = path_of(&mut obj, RUN_KEYS[2])?;
        let time_scale = match obj.remove("time_scale") {
            None | Some(Value::Null) => 1.0,
            Some(v) => v
                .as_f64()
                .filter(|s| *s > 0.0)
                .ok_or_else(|| Error::Config(format!("time_scale must be a positive number, got {v}")))?,
        };
        let base_train = preset(preset_name.as_deref().unwrap_or("synthetic"))?;
        let Value::Object(mut merged) = serde_json::to_value(&base_train)? else {
            unreachable!("a struct serializes to an object")
        };
        merged.extend(obj);
        let train: TrainConfig =
            serde_json::from_value(Value::Object(merged)).map_err(|e| Error::Config(e.to_string()))?;
        train.validate()?;
        Ok(RunConfig {
            preset: preset_name,
            train_data,
            test_data,
            time_scale,
            train,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json_str(&text, path.parent())
    }

    pub fn from_preset(name: &str) -> Result<Self> {
        Ok(RunConfig {
            preset: Some(name.to_string()),
            train_data: None,
            test_data: None,
            time_scale: 1.0,
            train: preset(name)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mimic_preset_values() {
        let c = preset("mimic").unwrap();
        assert_eq!(c.learning_rate, 1e-3);
        assert_eq!(c.dim_z, 70);
        assert_eq!(c.likelihood_weight, 0.1);
        assert_eq!(c.time_weight, 0.01);
        assert_eq!(c.layers, 6);
        assert_eq!(c.dim_h, 128);
        assert_eq!(c.hidden, 90);
        assert_eq!(c.patience, 5);
        assert_eq!(c.weight_decay, 1e-5);
    }

    #[test]
    fn every_preset_is_valid() {
        for name in PRESETS {
            preset(name).unwrap().validate().unwrap();
        }
        assert!(matches!(preset("nope"), Err(Error::Config(_))));
    }

    #[test]
    fn file_values_override_the_preset() {
        let c = RunConfig::from_json_str(
            r#"{"preset": "retweet", "max_iter": 3, "train_data": "d/train.json", "time_scale": 10}"#,
            Some(Path::new("/base")),
        )
        .unwrap();
        assert_eq!(c.train.max_iter, 3);
        assert_eq!(c.train.dim_z, 80);
        assert_eq!(c.train.batch_size, 128);
        assert_eq!(c.train_data, Some(PathBuf::from("/base/d/train.json")));
        assert_eq!(c.time_scale, 10.0);
    }

    #[test]
    fn unknown_and_invalid_fields_are_config_errors() {
        assert!(matches!(
            RunConfig::from_json_str(r#"{"learning_rat": 0.1}"#, None),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            RunConfig::from_json_str(r#"{"patience": 0}"#, None),
            Err(Error::Config(_))
        ));
        assert!(matches!(RunConfig::from_json_str("[1]", None), Err(Error::Config(_))));
    }
}
