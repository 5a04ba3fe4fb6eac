//! Permanent prompt graph, its per-pass temporary overlay, and validation.

mod pass;
mod validate;

use alloc::borrow::ToOwned;
use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::borrow::Borrow;
use core::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use pass::{
    DynamicOp, EvalFailure, EvalRequest, Evaluated, NodeEvaluator, NodeFailure, OpRejection,
    PassError, PassFailure, PassOptions,
};
pub use validate::{validate_defs, Finding, ValidationReport};

use pass::Overlay;

/// Per-pass cap on dynamically added nodes.
pub const DEFAULT_DYNAMIC_NODE_BUDGET: usize = 64;

/// Unique key of a node within a graph.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct NodeId(String);

impl NodeId {
    pub fn new(id: impl Into<String>) -> Self {
        NodeId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl Borrow<str> for NodeId {
    fn borrow(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for NodeId {
    fn from(s: &str) -> Self {
        NodeId(s.to_owned())
    }
}

impl From<String> for NodeId {
    fn from(s: String) -> Self {
        NodeId(s)
    }
}

impl PartialEq<str> for NodeId {
    fn eq(&self, other: &str) -> bool {
        self.0 == other
    }
}

impl PartialEq<&str> for NodeId {
    fn eq(&self, other: &&str) -> bool {
        self.0 == *other
    }
}

/// Reference to a registered hook, written `id` or `id:argument` in graph files.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct HookRef {
    pub id: String,
    pub arg: Option<String>,
}

impl HookRef {
    pub fn new(id: impl Into<String>) -> Self {
        HookRef { id: id.into(), arg: None }
    }

    pub fn with_arg(id: impl Into<String>, arg: impl Into<String>) -> Self {
        HookRef { id: id.into(), arg: Some(arg.into()) }
    }

    pub fn parse(text: &str) -> Self {
        match text.split_once(':') {
            Some((id, arg)) => HookRef::with_arg(id.trim(), arg.trim()),
            None => HookRef::new(text.trim()),
        }
    }
}

impl fmt::Display for HookRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.arg {
            Some(arg) => write!(f, "{}:{}", self.id, arg),
            None => f.write_str(&self.id),
        }
    }
}

impl Serialize for HookRef {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for HookRef {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        Ok(HookRef::parse(&text))
    }
}

/// Name of the built-in compose strategy.
pub const DEFAULT_COMPOSE: &str = "default";
/// Name of the default backend profile.
pub const DEFAULT_MODEL: &str = "default";

/// A subtask: prompt template, dependencies and the hooks that process it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeDef {
    pub id: NodeId,
    pub prompt: String,
    pub deps: Vec<NodeId>,
    /// `"default"` or the id of a registered compose hook.
    pub compose: String,
    pub after_query: Option<HookRef>,
    /// Backend profile id, `"default"` unless overridden.
    pub model: String,
    pub temporary: bool,
}

impl NodeDef {
    pub fn new(id: impl Into<NodeId>, prompt: impl Into<String>) -> Self {
        NodeDef {
            id: id.into(),
            prompt: prompt.into(),
            deps: Vec::new(),
            compose: DEFAULT_COMPOSE.to_string(),
            after_query: None,
            model: DEFAULT_MODEL.to_string(),
            temporary: false,
        }
    }

    pub fn with_deps<I, D>(mut self, deps: I) -> Self
    where
        I: IntoIterator<Item = D>,
        D: Into<NodeId>,
    {
        self.deps = deps.into_iter().map(Into::into).collect();
        self
    }

    pub fn with_hook(mut self, hook: HookRef) -> Self {
        self.after_query = Some(hook);
        self
    }

    pub fn with_compose(mut self, compose: impl Into<String>) -> Self {
        self.compose = compose.into();
        self
    }

    pub fn with_model(mut self, model: impl Into<String>) -> Self {
        self.model = model.into();
        self
    }

    pub fn temporary(mut self) -> Self {
        self.temporary = true;
        self
    }

    /// Checks the per-node invariants: non-empty id, no duplicate or self deps.
    pub fn check(&self) -> Result<(), GraphError> {
        if self.id.as_str().is_empty() {
            return Err(GraphError::InvalidNode { id: self.id.clone(), reason: "empty id".into() });
        }
        let mut seen = BTreeSet::new();
        for dep in &self.deps {
            if *dep == self.id {
                return Err(GraphError::InvalidNode {
                    id: self.id.clone(),
                    reason: "node depends on itself".into(),
                });
            }
            if !seen.insert(dep) {
                return Err(GraphError::InvalidNode {
                    id: self.id.clone(),
                    reason: alloc::format!("duplicate dependency `{dep}`"),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("node `{0}` already exists")]
    DuplicateId(NodeId),
    #[error("node `{node}` depends on unknown node `{dep}`")]
    UnknownDependency { node: NodeId, dep: NodeId },
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("cycle introduced: {}", join_path(.path))]
    CycleIntroduced { path: Vec<NodeId> },
    #[error("invalid node `{id}`: {reason}")]
    InvalidNode { id: NodeId, reason: String },
    #[error("graph is mid-pass; permanent edits are not allowed")]
    MidPass,
}

pub(crate) fn join_path(path: &[NodeId]) -> String {
    let parts: Vec<&str> = path.iter().map(NodeId::as_str).collect();
    parts.join(" -> ")
}

/// The permanent graph. Temporary state only exists while a pass runs.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: BTreeMap<NodeId, NodeDef>,
    order: Vec<NodeId>,
    dynamic_budget: usize,
    overlay: Option<Overlay>,
}

impl Default for Graph {
    fn default() -> Self {
        Graph::new()
    }
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.order == other.order && self.nodes == other.nodes
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph {
            nodes: BTreeMap::new(),
            order: Vec::new(),
            dynamic_budget: DEFAULT_DYNAMIC_NODE_BUDGET,
            overlay: None,
        }
    }

    /// Builds a graph from definitions in order. Dependencies may refer to
    /// nodes defined later; the result must have no dangling dependencies.
    pub fn from_defs<I: IntoIterator<Item = NodeDef>>(defs: I) -> Result<Self, GraphError> {
        let mut graph = Graph::new();
        for def in defs {
            graph.add_node(def)?;
        }
        if let Some((node, dep)) = graph.dangling_deps().into_iter().next() {
            return Err(GraphError::UnknownDependency { node, dep });
        }
        Ok(graph)
    }

    pub fn with_dynamic_budget(mut self, budget: usize) -> Self {
        self.dynamic_budget = budget;
        self
    }

    pub fn dynamic_budget(&self) -> usize {
        self.dynamic_budget
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.nodes.contains_key(id)
    }

    pub fn node(&self, id: &str) -> Option<&NodeDef> {
        self.nodes.get(id)
    }

    /// Permanent nodes in insertion order.
    pub fn defs(&self) -> impl Iterator<Item = &NodeDef> + '_ {
        self.order.iter().map(move |id| &self.nodes[id])
    }

    pub fn ids(&self) -> impl Iterator<Item = &NodeId> + '_ {
        self.order.iter()
    }

    /// Permanent edges `(dependency, dependent)` whose endpoints both exist.
    pub fn edges(&self) -> BTreeSet<(NodeId, NodeId)> {
        let mut edges = BTreeSet::new();
        for def in self.nodes.values() {
            for dep in &def.deps {
                if self.nodes.contains_key(dep) {
                    edges.insert((dep.clone(), def.id.clone()));
                }
            }
        }
        edges
    }

    /// Dependencies that name nodes not (yet) in the graph.
    pub fn dangling_deps(&self) -> Vec<(NodeId, NodeId)> {
        let mut out = Vec::new();
        for def in self.defs() {
            for dep in &def.deps {
                if !self.nodes.contains_key(dep) {
                    out.push((def.id.clone(), dep.clone()));
                }
            }
        }
        out
    }

    pub fn is_mid_pass(&self) -> bool {
        self.overlay.is_some()
    }

    /// Nodes evaluated so far in the running pass; `None` between passes.
    pub fn evaluated_this_pass(&self) -> Option<&BTreeSet<NodeId>> {
        self.overlay.as_ref().map(|o| &o.evaluated)
    }

    /// Registers a permanent node. Dependencies on ids that are not present
    /// yet are kept and become edges once those nodes are added.
    pub fn add_node(&mut self, mut def: NodeDef) -> Result<NodeId, GraphError> {
        if self.is_mid_pass() {
            return Err(GraphError::MidPass);
        }
        def.check()?;
        if self.nodes.contains_key(&def.id) {
            return Err(GraphError::DuplicateId(def.id));
        }
        def.temporary = false;
        // A cycle through the new node needs a path new -> ... -> dep.
        for dep in &def.deps {
            if self.nodes.contains_key(dep) {
                if let Some(mut path) = self.path_via_dependents(&def.id, dep) {
                    path.push(def.id.clone());
                    return Err(GraphError::CycleIntroduced { path });
                }
            }
        }
        let id = def.id.clone();
        self.order.push(id.clone());
        self.nodes.insert(id.clone(), def);
        Ok(id)
    }

    /// Adds a permanent edge by appending `from` to `to`'s dependencies.
    pub fn add_edge(&mut self, from: &str, to: &str) -> Result<(), GraphError> {
        if self.is_mid_pass() {
            return Err(GraphError::MidPass);
        }
        if !self.nodes.contains_key(to) {
            return Err(GraphError::UnknownNode(to.into()));
        }
        if !self.nodes.contains_key(from) {
            return Err(GraphError::UnknownDependency { node: to.into(), dep: from.into() });
        }
        if from == to {
            return Err(GraphError::CycleIntroduced { path: alloc::vec![from.into(), to.into()] });
        }
        if self.nodes[to].deps.iter().any(|d| d == from) {
            return Ok(());
        }
        if let Some(mut path) = self.path_via_dependents(&NodeId::from(to), &NodeId::from(from)) {
            path.push(to.into());
            return Err(GraphError::CycleIntroduced { path });
        }
        self.nodes.get_mut(to).expect("checked above").deps.push(from.into());
        Ok(())
    }

    pub fn remove_edge(&mut self, from: &str, to: &str) -> Result<(), GraphError> {
        if self.is_mid_pass() {
            return Err(GraphError::MidPass);
        }
        let def = self.nodes.get_mut(to).ok_or_else(|| GraphError::UnknownNode(to.into()))?;
        let before = def.deps.len();
        def.deps.retain(|d| d != from);
        if def.deps.len() == before {
            return Err(GraphError::UnknownDependency { node: to.into(), dep: from.into() });
        }
        Ok(())
    }

    /// Removes a permanent node and every dependency on it.
    pub fn remove_node(&mut self, id: &str) -> Result<NodeDef, GraphError> {
        if self.is_mid_pass() {
            return Err(GraphError::MidPass);
        }
        let def = self.nodes.remove(id).ok_or_else(|| GraphError::UnknownNode(id.into()))?;
        self.order.retain(|n| n != id);
        for other in self.nodes.values_mut() {
            other.deps.retain(|d| d != id);
        }
        Ok(def)
    }

    /// Replaces a node definition in place, keeping its position.
    pub fn replace_node(&mut self, def: NodeDef) -> Result<(), GraphError> {
        if self.is_mid_pass() {
            return Err(GraphError::MidPass);
        }
        if !self.nodes.contains_key(&def.id) {
            return Err(GraphError::UnknownNode(def.id));
        }
        let old = self.nodes.remove(&def.id).expect("checked above");
        let id = def.id.clone();
        match self.add_node_at(def) {
            Ok(()) => Ok(()),
            Err(e) => {
                self.nodes.insert(id, old);
                Err(e)
            }
        }
    }

    fn add_node_at(&mut self, mut def: NodeDef) -> Result<(), GraphError> {
        def.check()?;
        def.temporary = false;
        for dep in &def.deps {
            if self.nodes.contains_key(dep) {
                if let Some(mut path) = self.path_via_dependents(&def.id, dep) {
                    path.push(def.id.clone());
                    return Err(GraphError::CycleIntroduced { path });
                }
            }
        }
        self.nodes.insert(def.id.clone(), def);
        Ok(())
    }

    /// Finds a path `start -> ... -> goal` following dependency edges forward
    /// (from a node to the nodes that depend on it).
    fn path_via_dependents(&self, start: &NodeId, goal: &NodeId) -> Option<Vec<NodeId>> {
        let mut dependents: BTreeMap<&NodeId, Vec<&NodeId>> = BTreeMap::new();
        for def in self.nodes.values() {
            for dep in &def.deps {
                dependents.entry(dep).or_default().push(&def.id);
            }
        }
        let mut parent: BTreeMap<&NodeId, &NodeId> = BTreeMap::new();
        let mut stack = alloc::vec![start];
        let mut seen = BTreeSet::new();
        seen.insert(start);
        while let Some(cur) = stack.pop() {
            if cur == goal {
                let mut path = alloc::vec![cur.clone()];
                let mut at = cur;
                while let Some(p) = parent.get(at) {
                    path.push((*p).clone());
                    at = p;
                }
                path.reverse();
                return Some(path);
            }
            if let Some(next) = dependents.get(cur) {
                for n in next {
                    if seen.insert(*n) {
                        parent.insert(*n, cur);
                        stack.push(*n);
                    }
                }
            }
        }
        None
    }
}
