//! Graph specification files.
//!
//! A graph file is a JSON object mapping node ids to
//! `{"prompt", "dep", "compose"?, "after_query"?, "model"?}` in the order the
//! nodes were written. [`GraphFile::to_canonical`] is the only writer; a file
//! it produced loads and saves back to identical bytes.

use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use promptdag_core::graph::{DEFAULT_COMPOSE, DEFAULT_MODEL};
use promptdag_core::{Graph, GraphError, HookRef, NodeDef, NodeId};
use serde::de::{MapAccess, Visitor};
use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphFileError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: io::Error },
    #[error("{path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Entry {
    prompt: String,
    #[serde(default)]
    dep: Vec<NodeId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    compose: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    after_query: Option<HookRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    model: Option<String>,
}

impl Entry {
    fn from_def(def: &NodeDef) -> Self {
        Entry {
            prompt: def.prompt.clone(),
            dep: def.deps.clone(),
            compose: (def.compose != DEFAULT_COMPOSE).then(|| def.compose.clone()),
            after_query: def.after_query.clone(),
            model: (def.model != DEFAULT_MODEL).then(|| def.model.clone()),
        }
    }

    fn into_def(self, id: String) -> NodeDef {
        let mut def = NodeDef::new(id, self.prompt).with_deps(self.dep);
        def.after_query = self.after_query;
        if let Some(c) = self.compose {
            def.compose = c;
        }
        if let Some(m) = self.model {
            def.model = m;
        }
        def
    }
}

/// Node definitions in file order. Duplicate ids are kept so validation can
/// report them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct GraphFile {
    pub nodes: Vec<NodeDef>,
}

impl Serialize for GraphFile {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.nodes.len()))?;
        for def in &self.nodes {
            map.serialize_entry(def.id.as_str(), &Entry::from_def(def))?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for GraphFile {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct Ordered;

        impl<'de> Visitor<'de> for Ordered {
            type Value = GraphFile;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a map from node id to node definition")
            }

            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<GraphFile, A::Error> {
                let mut nodes = Vec::new();
                while let Some((id, entry)) = access.next_entry::<String, Entry>()? {
                    nodes.push(entry.into_def(id));
                }
                Ok(GraphFile { nodes })
            }
        }

        deserializer.deserialize_map(Ordered)
    }
}

impl GraphFile {
    pub fn from_graph(graph: &Graph) -> Self {
        GraphFile { nodes: graph.defs().cloned().collect() }
    }

    pub fn parse(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, GraphFileError> {
        let text = fs::read_to_string(path).map_err(|source| GraphFileError::Read { path: path.into(), source })?;
        Self::parse(&text).map_err(|source| GraphFileError::Parse { path: path.into(), source })
    }

    /// Pretty-printed JSON with two-space indentation and a final newline.
    pub fn to_canonical(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("graph files always serialize");
        text.push('\n');
        text
    }

    /// Writes through a sibling temporary file so a failed save leaves any
    /// previous file intact.
    pub fn save(&self, path: &Path) -> Result<(), GraphFileError> {
        write_atomic(path, self.to_canonical().as_bytes()).map_err(|source| GraphFileError::Write { path: path.into(), source })
    }

    pub fn to_graph(&self) -> Result<Graph, GraphError> {
        Graph::from_defs(self.nodes.iter().cloned())
    }
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })
}
