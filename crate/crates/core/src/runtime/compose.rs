use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::NodeOutput;
use crate::graph::{NodeDef, NodeId};
use crate::store::{Database, DbPath};
use crate::template::{render_value, resolve_template, split_leading, TemplateError, TemplateMode};

/// Joins consecutive segments.
pub const SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum SegmentSource {
    Db(DbPath),
    Dependency(NodeId),
    OwnPrompt,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub source: SegmentSource,
    pub text: String,
}

/// The single prompt sent for a node.
///
/// `rendered_text` is always the segment texts joined by [`SEPARATOR`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComposedPrompt {
    pub node_id: NodeId,
    pub segments: Vec<Segment>,
    pub rendered_text: String,
    /// Sent as a system message when present.
    pub system: Option<String>,
    /// Keys left empty in lenient mode.
    pub warnings: Vec<DbPath>,
}

impl ComposedPrompt {
    pub fn from_segments(node_id: NodeId, segments: Vec<Segment>) -> Self {
        let texts: Vec<&str> = segments.iter().map(|s| s.text.as_str()).collect();
        let rendered_text = texts.join(SEPARATOR);
        ComposedPrompt { node_id, segments, rendered_text, system: None, warnings: Vec::new() }
    }
}

/// Signature of a compose hook.
pub type ComposeFn = fn(&NodeDef, &[NodeOutput], &Database, TemplateMode) -> Result<ComposedPrompt, TemplateError>;

pub fn dependency_header(id: &NodeId) -> String {
    format!("Context from subtask \"{id}\":")
}

pub fn db_header(path: &DbPath) -> String {
    format!("Context from database \"{path}\":")
}

/// Leading `$db…$` material, then dependency outputs in the order given,
/// then the node's own prompt with inline placeholders substituted.
pub fn compose_default(
    node: &NodeDef,
    deps: &[NodeOutput],
    db: &Database,
    mode: TemplateMode,
) -> Result<ComposedPrompt, TemplateError> {
    let (keys, rest) = split_leading(&node.prompt)?;
    let mut segments = Vec::with_capacity(keys.len() + deps.len() + 1);
    let mut warnings = Vec::new();
    for key in keys {
        match db.get(&key) {
            Some(v) => segments.push(Segment {
                text: format!("{}\n{}", db_header(&key), render_value(v)),
                source: SegmentSource::Db(key),
            }),
            None if mode == TemplateMode::Lenient => warnings.push(key),
            None => return Err(TemplateError::UnresolvedTemplateKey(format!("{key}"))),
        }
    }
    for dep in deps {
        segments.push(Segment {
            text: format!("{}\n{}", dependency_header(&dep.node_id), dep.rendered()),
            source: SegmentSource::Dependency(dep.node_id.clone()),
        });
    }
    let own = resolve_template(rest, db, mode)?;
    warnings.extend(own.warnings);
    segments.push(Segment { source: SegmentSource::OwnPrompt, text: own.text });
    let mut composed = ComposedPrompt::from_segments(node.id.clone(), segments);
    composed.warnings = warnings;
    Ok(composed)
}

/// Like [`compose_default`] but without dependency outputs; for nodes that
/// read everything they need from the database.
pub fn compose_db_only(
    node: &NodeDef,
    _deps: &[NodeOutput],
    db: &Database,
    mode: TemplateMode,
) -> Result<ComposedPrompt, TemplateError> {
    compose_default(node, &[], db, mode)
}
