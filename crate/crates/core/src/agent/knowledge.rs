use alloc::format;
use alloc::string::{String, ToString};

use serde::{Deserialize, Serialize};
use serde_json::Map;
use thiserror::Error;

use crate::runtime::{flag, AfterQueryHook, ExpectedShape, HookContext, HookError};
use crate::store::{reserved, Database};
use crate::Value;

/// Flags that must all be yes before an item enters the knowledge base.
pub const KB_FLAGS: [&str; 5] = ["discovered", "general", "unknown", "concrete_and_precise", "solid"];

/// The unknown-information list and the knowledge base.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct KnowledgeState {
    pub unknown: Map<String, Value>,
    pub kb: Map<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KnowledgeError {
    #[error("schema violation: {0}")]
    SchemaViolation(String),
}

fn violation(msg: String) -> KnowledgeError {
    KnowledgeError::SchemaViolation(msg)
}

impl KnowledgeState {
    pub fn from_db(db: &Database) -> Self {
        let map = |key| db.root().get(key).and_then(Value::as_object).cloned().unwrap_or_default();
        KnowledgeState { unknown: map(reserved::UNKNOWN), kb: map(reserved::KB) }
    }

    /// No item is both known and unknown; every KB value is non-empty text.
    pub fn check(&self) -> Result<(), String> {
        if let Some(k) = self.unknown.keys().find(|k| self.kb.contains_key(*k)) {
            return Err(format!("`{k}` is in both the knowledge base and the unknown list"));
        }
        if let Some((k, _)) = self.kb.iter().find(|(_, v)| !v.as_str().is_some_and(|s| !s.is_empty())) {
            return Err(format!("knowledge base entry `{k}` is not non-empty text"));
        }
        Ok(())
    }

    fn stage(&self, cx: &mut HookContext<'_>) -> Result<(), HookError> {
        cx.write(reserved::KB, Value::Object(self.kb.clone()))?;
        cx.write(reserved::UNKNOWN, Value::Object(self.unknown.clone()))
    }
}

fn record<'a>(name: &str, value: &'a Value) -> Result<&'a Map<String, Value>, KnowledgeError> {
    value.as_object().ok_or_else(|| violation(format!("item `{name}` must be a dictionary")))
}

fn read_flag(name: &str, rec: &Map<String, Value>, field: &str) -> Result<bool, KnowledgeError> {
    let v = rec.get(field).ok_or_else(|| violation(format!("item `{name}` lacks `{field}`")))?;
    flag(v).ok_or_else(|| violation(format!("item `{name}`: `{field}` must be yes or no")))
}

/// Moves every fully confirmed item into the knowledge base, keyed by item
/// name with its `discovery_short` as the value. Existing entries are never
/// overwritten.
pub fn kb_commit(answer: &Value, state: &KnowledgeState) -> Result<KnowledgeState, KnowledgeError> {
    let items = answer.as_object().ok_or_else(|| violation("expected a dictionary of items".into()))?;
    let mut next = state.clone();
    for (name, value) in items {
        let rec = record(name, value)?;
        let mut confirmed = true;
        for f in KB_FLAGS {
            confirmed &= read_flag(name, rec, f)?;
        }
        let short = rec.get("discovery_short").and_then(Value::as_str).map(str::trim).unwrap_or("");
        if !confirmed || short.is_empty() || short.eq_ignore_ascii_case("na") {
            continue;
        }
        if !next.kb.contains_key(name) {
            next.kb.insert(name.clone(), Value::String(short.to_string()));
        }
        next.unknown.remove(name);
    }
    Ok(next)
}

/// Adds new relevant, novel items to the unknown list. Known names keep
/// their existing entry; names already in the knowledge base are ignored.
pub fn unknown_merge(answer: &Value, state: &KnowledgeState) -> Result<KnowledgeState, KnowledgeError> {
    let items = answer.as_object().ok_or_else(|| violation("expected a dictionary of items".into()))?;
    let mut next = state.clone();
    for (name, value) in items {
        let rec = record(name, value)?;
        let keep = read_flag(name, rec, "novel")? && read_flag(name, rec, "relevant")?;
        if keep && !next.kb.contains_key(name) && !next.unknown.contains_key(name) {
            next.unknown.insert(name.clone(), value.clone());
        }
    }
    Ok(next)
}

pub struct KbAddHook;

impl AfterQueryHook for KbAddHook {
    fn contract(&self) -> &str {
        "a dictionary of items, each with the five discovery flags and discovery_short"
    }
    fn effects(&self) -> &str {
        "moves confirmed items from unknown into kb"
    }
    fn check_arg(&self, arg: Option<&str>, _: &dyn Fn(&str) -> bool) -> Result<(), String> {
        arg.map_or(Ok(()), |a| Err(format!("kb_add takes no argument (got `{a}`)")))
    }
    fn run(&self, cx: &mut HookContext<'_>) -> Result<Value, HookError> {
        let parsed = cx.parse(&ExpectedShape::Map)?;
        let next = kb_commit(&parsed, &KnowledgeState::from_db(cx.db)).map_err(|e| HookError::Retry(e.to_string()))?;
        next.stage(cx)?;
        Ok(parsed)
    }
}

pub struct UnknownMergeHook;

impl AfterQueryHook for UnknownMergeHook {
    fn contract(&self) -> &str {
        "a dictionary of items, each with novel and relevant flags"
    }
    fn effects(&self) -> &str {
        "adds new items to unknown"
    }
    fn check_arg(&self, arg: Option<&str>, _: &dyn Fn(&str) -> bool) -> Result<(), String> {
        arg.map_or(Ok(()), |a| Err(format!("unknown_merge takes no argument (got `{a}`)")))
    }
    fn run(&self, cx: &mut HookContext<'_>) -> Result<Value, HookError> {
        let parsed = cx.parse(&ExpectedShape::Map)?;
        let next = unknown_merge(&parsed, &KnowledgeState::from_db(cx.db)).map_err(|e| HookError::Retry(e.to_string()))?;
        next.stage(cx)?;
        Ok(parsed)
    }
}
