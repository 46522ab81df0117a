//! Optional JSON run configuration. Keys mirror the long flag names with
//! `-` replaced by `_`; a flag given on the command line always wins.
//! Nested objects (`rf`, `svm`, `grid`, `synth`, `matrix`) overlay the
//! corresponding library defaults field by field.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::CliError;

#[derive(Debug, Default)]
pub struct RunConfig {
    values: Map<String, Value>,
    source: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        match serde_json::from_str(&text) {
            Ok(Value::Object(values)) => Ok(Self {
                values,
                source: Some(path.to_path_buf()),
            }),
            Ok(_) => Err(CliError::Usage(format!("{}: config must be a JSON object", path.display()))),
            Err(e) => Err(CliError::Usage(format!("{}: {e}", path.display()))),
        }
    }

    fn bad_key(&self, key: &str, e: impl std::fmt::Display) -> CliError {
        let origin = self.source.as_deref().map_or("config".into(), |p| p.display().to_string());
        CliError::Usage(format!("{origin}: key `{key}`: {e}"))
    }

    /// The flag value, else the config value, else `None`.
    pub fn pick<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<Option<T>, CliError> {
        if flag.is_some() {
            return Ok(flag);
        }
        self.values
            .get(key)
            .map(|v| serde_json::from_value(v.clone()).map_err(|e| self.bad_key(key, e)))
            .transpose()
    }

    pub fn pick_or<T: DeserializeOwned>(&self, flag: Option<T>, key: &str, default: T) -> Result<T, CliError> {
        Ok(self.pick(flag, key)?.unwrap_or(default))
    }

    /// A value that must come from the flag `--{flag}` or the config.
    pub fn require<T: DeserializeOwned>(&self, flag: Option<T>, key: &str) -> Result<T, CliError> {
        self.pick(flag, key)?
            .ok_or_else(|| CliError::Usage(format!("missing required --{}", key.replace('_', "-"))))
    }

    /// `base` with the fields of the config object under `key` replaced.
    pub fn overlay<T: Serialize + DeserializeOwned>(&self, base: T, key: &str) -> Result<T, CliError> {
        let Some(patch) = self.values.get(key) else {
            return Ok(base);
        };
        let Value::Object(patch) = patch else {
            return Err(self.bad_key(key, "expected an object"));
        };
        let mut merged = serde_json::to_value(base).map_err(|e| self.bad_key(key, e))?;
        if let Value::Object(m) = &mut merged {
            for (k, v) in patch {
                if !m.contains_key(k) {
                    return Err(self.bad_key(key, format!("unknown field `{k}`")));
                }
                m.insert(k.clone(), v.clone());
            }
        }
        serde_json::from_value(merged).map_err(|e| self.bad_key(key, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use debris_core::classifiers::RfHyperParams;

    fn config(json: &str) -> RunConfig {
        match serde_json::from_str(json).unwrap() {
            Value::Object(values) => RunConfig { values, source: None },
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_win_over_config() {
        let c = config(r#"{"seed": 7, "p_low": 5.0}"#);
        assert_eq!(c.pick(Some(3u64), "seed").unwrap(), Some(3));
        assert_eq!(c.pick(None::<u64>, "seed").unwrap(), Some(7));
        assert_eq!(c.pick_or(None, "p_high", 98.0).unwrap(), 98.0);
        assert!(c.require(None::<String>, "in").is_err());
    }

    #[test]
    fn overlay_replaces_named_fields_only() {
        let c = config(r#"{"rf": {"n_trees": 12, "max_depth": null}}"#);
        let hp = c.overlay(RfHyperParams::final_model(), "rf").unwrap();
        assert_eq!(hp.n_trees, 12);
        assert_eq!(hp.max_depth, None);
        assert_eq!(hp.max_leaf_nodes, Some(8));
        let bad = config(r#"{"rf": {"trees": 12}}"#);
        assert!(matches!(bad.overlay(RfHyperParams::final_model(), "rf"), Err(CliError::Usage(_))));
    }
}
