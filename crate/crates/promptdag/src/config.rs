//! Backend configuration files.
//!
//! ```json
//! {
//!   "profiles": [{"id": "default", "endpoint": "https://api.openai.com/v1", "model": "gpt-4o"}],
//!   "prices": {"gpt-4o": {"input": 0.005, "output": 0.015}},
//!   "limits": {"max_retries": 3}
//! }
//! ```
//!
//! Credentials never appear here; see [`crate::http`].

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use promptdag_core::{BackendProfile, Limits, PriceTable};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {detail}")]
    Invalid { path: PathBuf, detail: String },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub profiles: Vec<BackendProfile>,
    pub prices: PriceTable,
    pub limits: Option<Limits>,
}

impl BackendConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let config: BackendConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        config.check().map_err(|detail| ConfigError::Invalid { path: path.into(), detail })?;
        Ok(config)
    }

    /// Profile invariants, unique ids and non-negative rates.
    pub fn check(&self) -> Result<(), String> {
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.profiles {
            p.check()?;
            if !seen.insert(p.id.as_str()) {
                return Err(format!("duplicate profile `{}`", p.id));
            }
        }
        for (model, rate) in &self.prices.0 {
            if !(rate.input >= 0.0 && rate.output >= 0.0) {
                return Err(format!("rates for `{model}` must be >= 0"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_fields_default() {
        let c: BackendConfig = serde_json::from_str(r#"{"profiles": [{"id": "fast", "model": "m"}]}"#).unwrap();
        let p = &c.profiles[0];
        assert_eq!((p.temperature, p.retry.max_attempts, p.requires_key), (0.0, 4, true));
        assert!(c.check().is_ok());
    }

    #[test]
    fn invalid_profiles_are_rejected() {
        let c: BackendConfig = serde_json::from_str(r#"{"profiles": [{"id": "a", "temperature": -1}]}"#).unwrap();
        assert!(c.check().is_err());
        let c: BackendConfig = serde_json::from_str(r#"{"profiles": [{"id": "a"}, {"id": "a"}]}"#).unwrap();
        assert!(c.check().unwrap_err().contains("duplicate"));
        let c: BackendConfig = serde_json::from_str(r#"{"prices": {"m": {"input": -0.1, "output": 0}}}"#).unwrap();
        assert!(c.check().is_err());
    }
}
