use alloc::boxed::Box;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use thiserror::Error;

use super::compose::{compose_db_only, ComposeFn};
use super::parse::{parse_structured_block, ExpectedShape};
use super::Limits;
use crate::graph::{DynamicOp, NodeDef, NodeId};
use crate::store::{Database, DbPath, StagedWrites};
use crate::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HookError {
    /// The answer is unusable; the message is shown to the model on retry.
    #[error("{0}")]
    Retry(String),
    /// The node cannot succeed no matter what the model answers.
    #[error("{0}")]
    Fatal(String),
}

/// What a hook sees and produces for one attempt.
///
/// Hooks read the database as it was before the node ran. Writes are staged
/// and only committed when the hook succeeds.
pub struct HookContext<'a> {
    pub node: &'a NodeDef,
    pub arg: Option<&'a str>,
    pub answer: &'a str,
    pub db: &'a Database,
    pub nodes: &'a BTreeSet<NodeId>,
    pub pass: u64,
    pub limits: &'a Limits,
    pub writes: StagedWrites,
    pub ops: Vec<DynamicOp>,
}

impl<'a> HookContext<'a> {
    pub fn new(node: &'a NodeDef, answer: &'a str, db: &'a Database, nodes: &'a BTreeSet<NodeId>, limits: &'a Limits) -> Self {
        HookContext {
            node,
            arg: node.after_query.as_ref().and_then(|h| h.arg.as_deref()),
            answer,
            db,
            nodes,
            pass: 0,
            limits,
            writes: StagedWrites::default(),
            ops: Vec::new(),
        }
    }

    pub fn write(&mut self, path: &str, value: Value) -> Result<(), HookError> {
        let path = DbPath::parse(path).map_err(|e| HookError::Fatal(e.to_string()))?;
        self.writes.set(path, value);
        Ok(())
    }

    pub fn emit(&mut self, op: DynamicOp) {
        self.ops.push(op);
    }

    pub fn parse(&self, shape: &ExpectedShape) -> Result<Value, HookError> {
        parse_structured_block(self.answer, shape).map_err(|e| HookError::Retry(e.to_string()))
    }
}

/// Post-processing run on every model answer.
pub trait AfterQueryHook {
    /// What the answer must look like.
    fn contract(&self) -> &str;
    /// Database writes and dynamic ops the hook may perform.
    fn effects(&self) -> &str;
    /// Static check of the hook argument; `exists` tells whether a node id is
    /// in the graph.
    fn check_arg(&self, arg: Option<&str>, exists: &dyn Fn(&str) -> bool) -> Result<(), String> {
        let _ = exists;
        match arg {
            Some(a) => DbPath::parse(a).map(|_| ()).map_err(|e| e.to_string()),
            None => Ok(()),
        }
    }
    fn run(&self, cx: &mut HookContext<'_>) -> Result<Value, HookError>;
}

/// Answer kept verbatim; optionally stored at the argument path.
pub struct PassThrough;

impl AfterQueryHook for PassThrough {
    fn contract(&self) -> &str {
        "any text"
    }
    fn effects(&self) -> &str {
        "writes the answer text to the argument path, if given"
    }
    fn run(&self, cx: &mut HookContext<'_>) -> Result<Value, HookError> {
        let value = Value::String(cx.answer.to_string());
        if let Some(path) = cx.arg {
            cx.write(path, value.clone())?;
        }
        Ok(value)
    }
}

/// A structured block of a fixed shape; optionally stored at the argument path.
pub struct ParseShape {
    pub shape: ExpectedShape,
    pub contract: &'static str,
}

impl AfterQueryHook for ParseShape {
    fn contract(&self) -> &str {
        self.contract
    }
    fn effects(&self) -> &str {
        "writes the parsed value to the argument path, if given"
    }
    fn run(&self, cx: &mut HookContext<'_>) -> Result<Value, HookError> {
        let value = cx.parse(&self.shape)?;
        if let Some(path) = cx.arg {
            cx.write(path, value.clone())?;
        }
        Ok(value)
    }
}

/// Hooks and compose functions addressable by id.
pub struct HookRegistry {
    hooks: BTreeMap<String, Box<dyn AfterQueryHook>>,
    composers: BTreeMap<String, ComposeFn>,
}

impl Default for HookRegistry {
    fn default() -> Self {
        HookRegistry::builtin()
    }
}

impl core::fmt::Debug for HookRegistry {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("HookRegistry")
            .field("hooks", &self.hooks.keys().collect::<Vec<_>>())
            .field("composers", &self.composers.keys().collect::<Vec<_>>())
            .finish()
    }
}

impl HookRegistry {
    pub fn empty() -> Self {
        HookRegistry { hooks: BTreeMap::new(), composers: BTreeMap::new() }
    }

    /// Every built-in hook plus the `db_only` compose function.
    pub fn builtin() -> Self {
        let mut r = HookRegistry::empty();
        r.register("pass_through", PassThrough);
        r.register("parse_map", ParseShape { shape: ExpectedShape::Map, contract: "a JSON dictionary" });
        r.register("parse_list", ParseShape { shape: ExpectedShape::List, contract: "a JSON list" });
        r.register("parse_yes_no", ParseShape { shape: ExpectedShape::YesNo, contract: "an answer starting with yes or no" });
        crate::agent::register_hooks(&mut r);
        r.register_compose("db_only", compose_db_only);
        r
    }

    pub fn register(&mut self, id: impl Into<String>, hook: impl AfterQueryHook + 'static) {
        self.hooks.insert(id.into(), Box::new(hook));
    }

    pub fn register_compose(&mut self, id: impl Into<String>, compose: ComposeFn) {
        self.composers.insert(id.into(), compose);
    }

    pub fn get(&self, id: &str) -> Option<&dyn AfterQueryHook> {
        self.hooks.get(id).map(|h| &**h)
    }

    pub fn has_compose(&self, id: &str) -> bool {
        self.composers.contains_key(id)
    }

    pub fn compose(&self, id: &str) -> Option<ComposeFn> {
        self.composers.get(id).copied()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.hooks.keys().map(String::as_str)
    }

    /// `id: contract; effects` for each hook.
    pub fn describe(&self) -> Vec<String> {
        self.hooks.iter().map(|(id, h)| format!("{id}: {}; {}", h.contract(), h.effects())).collect()
    }
}
