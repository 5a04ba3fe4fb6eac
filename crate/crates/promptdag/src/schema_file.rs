//! Database schema files: declared key paths plus initial values.
//!
//! `{"paths": ["observation", "subgoals.subgoal", ...], "defaults": {"kb": {}}}`
//!
//! A graph `agent.json` picks up `agent.schema.json` from the same directory.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use promptdag_core::store::{DbError, DbSchema};
use promptdag_core::{DbPath, Value};
use serde::{Deserialize, Serialize};
use serde_json::Map;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SchemaFileError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Path { path: PathBuf, source: DbError },
    #[error("{path}: default `{key}` is not covered by a declared path")]
    UndeclaredDefault { path: PathBuf, key: String },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemaFile {
    pub paths: Vec<String>,
    /// Dot paths to values written before the first step when absent.
    #[serde(default)]
    pub defaults: Map<String, Value>,
}

impl SchemaFile {
    /// Loads and checks that every default lies under a declared path.
    pub fn load(path: &Path) -> Result<Self, SchemaFileError> {
        let text = fs::read_to_string(path).map_err(|source| SchemaFileError::Read { path: path.into(), source })?;
        let file: SchemaFile =
            serde_json::from_str(&text).map_err(|source| SchemaFileError::Parse { path: path.into(), source })?;
        let schema = file.schema().map_err(|source| SchemaFileError::Path { path: path.into(), source })?;
        for key in file.defaults.keys() {
            let p = DbPath::parse(key).map_err(|source| SchemaFileError::Path { path: path.into(), source })?;
            if !schema.covers(&p) {
                return Err(SchemaFileError::UndeclaredDefault { path: path.into(), key: key.clone() });
            }
        }
        Ok(file)
    }

    pub fn schema(&self) -> Result<DbSchema, DbError> {
        DbSchema::new(&self.paths)
    }

    /// `dir/name.json` becomes `dir/name.schema.json`.
    pub fn sibling_of(graph: &Path) -> PathBuf {
        let stem = graph.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        graph.with_file_name(format!("{stem}.schema.json"))
    }

    /// The sibling schema if one exists.
    pub fn load_sibling(graph: &Path) -> Result<Option<Self>, SchemaFileError> {
        let path = Self::sibling_of(graph);
        if path.is_file() {
            Self::load(&path).map(Some)
        } else {
            Ok(None)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_name() {
        assert_eq!(SchemaFile::sibling_of(Path::new("assets/crafter.json")), Path::new("assets/crafter.schema.json"));
    }

    #[test]
    fn defaults_must_be_declared() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.schema.json");
        fs::write(&path, r#"{"paths": ["kb"], "defaults": {"kb": {}, "unknown": {}}}"#).unwrap();
        assert!(matches!(SchemaFile::load(&path), Err(SchemaFileError::UndeclaredDefault { key, .. }) if key == "unknown"));
        fs::write(&path, r#"{"paths": ["kb", "subgoals"], "defaults": {"subgoals.subgoal": "NA"}}"#).unwrap();
        assert!(SchemaFile::load(&path).is_ok());
    }
}
