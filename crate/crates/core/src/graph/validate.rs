use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use super::{join_path, Graph, NodeDef, NodeId, DEFAULT_COMPOSE};
use crate::runtime::HookRegistry;
use crate::store::DbSchema;
use crate::template;

/// One problem that keeps a graph from being runnable.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Finding {
    DuplicateId(NodeId),
    InvalidNode { node: NodeId, reason: String },
    Cycle { path: Vec<NodeId> },
    UnknownDependency { node: NodeId, dep: NodeId },
    UnknownHook { node: NodeId, hook: String },
    UnknownCompose { node: NodeId, compose: String },
    HookArgument { node: NodeId, detail: String },
    MalformedTemplate { node: NodeId, detail: String },
    UnresolvedKey { node: NodeId, path: String },
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Finding::DuplicateId(id) => write!(f, "duplicate node id `{id}`"),
            Finding::InvalidNode { node, reason } => write!(f, "invalid node `{node}`: {reason}"),
            Finding::Cycle { path } => write!(f, "cycle: {}", join_path(path)),
            Finding::UnknownDependency { node, dep } => {
                write!(f, "UnknownDependency(\"{dep}\") in node `{node}`")
            }
            Finding::UnknownHook { node, hook } => write!(f, "unknown after-query hook `{hook}` in node `{node}`"),
            Finding::UnknownCompose { node, compose } => {
                write!(f, "unknown compose hook `{compose}` in node `{node}`")
            }
            Finding::HookArgument { node, detail } => write!(f, "bad hook argument in node `{node}`: {detail}"),
            Finding::MalformedTemplate { node, detail } => write!(f, "malformed template in node `{node}`: {detail}"),
            Finding::UnresolvedKey { node, path } => {
                write!(f, "key `$db.{path}$` in node `{node}` is not declared in the database schema")
            }
        }
    }
}

/// Diagnostics for a graph. Empty iff the graph is runnable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_empty(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn len(&self) -> usize {
        self.findings.len()
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for finding in &self.findings {
            writeln!(f, "{finding}")?;
        }
        Ok(())
    }
}

impl Graph {
    /// Checks the graph against a hook registry and, optionally, a declared
    /// database schema.
    pub fn validate(&self, hooks: &HookRegistry, schema: Option<&DbSchema>) -> ValidationReport {
        let defs: Vec<NodeDef> = self.defs().cloned().collect();
        validate_defs(&defs, hooks, schema)
    }
}

/// Validates raw node definitions, e.g. straight from a graph file that may
/// not even form a DAG.
pub fn validate_defs(defs: &[NodeDef], hooks: &HookRegistry, schema: Option<&DbSchema>) -> ValidationReport {
    let mut findings = Vec::new();
    let mut ids: BTreeMap<&NodeId, &NodeDef> = BTreeMap::new();
    for def in defs {
        if ids.insert(&def.id, def).is_some() {
            findings.push(Finding::DuplicateId(def.id.clone()));
        }
        if let Err(e) = def.check() {
            findings.push(Finding::InvalidNode { node: def.id.clone(), reason: alloc::format!("{e}") });
        }
    }
    for def in defs {
        for dep in &def.deps {
            if !ids.contains_key(dep) {
                findings.push(Finding::UnknownDependency { node: def.id.clone(), dep: dep.clone() });
            }
        }
    }
    if let Some(path) = find_cycle(defs, &ids) {
        findings.push(Finding::Cycle { path });
    }
    let exists = |id: &str| ids.contains_key(&NodeId::from(id));
    for def in defs {
        if let Some(hook) = &def.after_query {
            match hooks.get(&hook.id) {
                None => findings.push(Finding::UnknownHook { node: def.id.clone(), hook: hook.id.clone() }),
                Some(h) => {
                    if let Err(detail) = h.check_arg(hook.arg.as_deref(), &exists) {
                        findings.push(Finding::HookArgument { node: def.id.clone(), detail });
                    }
                }
            }
        }
        if def.compose != DEFAULT_COMPOSE && !hooks.has_compose(&def.compose) {
            findings.push(Finding::UnknownCompose { node: def.id.clone(), compose: def.compose.clone() });
        }
        match template::placeholders(&def.prompt) {
            Err(e) => findings.push(Finding::MalformedTemplate { node: def.id.clone(), detail: alloc::format!("{e}") }),
            Ok(paths) => {
                if let Some(schema) = schema {
                    let mut seen = BTreeSet::new();
                    for path in paths {
                        if !schema.covers(&path) && seen.insert(path.clone()) {
                            findings.push(Finding::UnresolvedKey { node: def.id.clone(), path: path.to_string() });
                        }
                    }
                }
            }
        }
    }
    ValidationReport { findings }
}

fn find_cycle(defs: &[NodeDef], ids: &BTreeMap<&NodeId, &NodeDef>) -> Option<Vec<NodeId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        Active,
        Done,
    }
    // Walk dependency edges backwards (node -> its deps); reverse the found
    // cycle so it reads in evaluation direction.
    fn visit<'a>(
        id: &'a NodeId,
        ids: &BTreeMap<&'a NodeId, &'a NodeDef>,
        marks: &mut BTreeMap<&'a NodeId, Mark>,
        stack: &mut Vec<&'a NodeId>,
    ) -> Option<Vec<NodeId>> {
        marks.insert(id, Mark::Active);
        stack.push(id);
        if let Some(def) = ids.get(id) {
            for dep in &def.deps {
                if !ids.contains_key(dep) {
                    continue;
                }
                match marks.get(dep) {
                    Some(Mark::Active) => {
                        let start = stack.iter().position(|n| *n == dep).unwrap();
                        let mut path: Vec<NodeId> = stack[start..].iter().map(|n| (*n).clone()).collect();
                        path.push(dep.clone());
                        path.reverse();
                        return Some(path);
                    }
                    Some(Mark::Done) => {}
                    None => {
                        if let Some(p) = visit(dep, ids, marks, stack) {
                            return Some(p);
                        }
                    }
                }
            }
        }
        stack.pop();
        marks.insert(id, Mark::Done);
        None
    }
    let mut marks = BTreeMap::new();
    for def in defs {
        if !marks.contains_key(&def.id) {
            let mut stack = Vec::new();
            if let Some(path) = visit(&def.id, ids, &mut marks, &mut stack) {
                return Some(path);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::HookRef;
    use crate::store::DbSchema;

    fn hooks() -> HookRegistry {
        HookRegistry::builtin()
    }

    #[test]
    fn unknown_dependency_is_reported() {
        let defs = [NodeDef::new("a", "x").with_deps(["nope"])];
        let report = validate_defs(&defs, &hooks(), None);
        assert_eq!(
            report.findings,
            [Finding::UnknownDependency { node: "a".into(), dep: "nope".into() }]
        );
        assert!(alloc::format!("{report}").contains("UnknownDependency(\"nope\")"));
    }

    #[test]
    fn cycle_is_reported_with_path() {
        let defs = [
            NodeDef::new("a", "").with_deps(["c"]),
            NodeDef::new("b", "").with_deps(["a"]),
            NodeDef::new("c", "").with_deps(["b"]),
        ];
        let report = validate_defs(&defs, &hooks(), None);
        let Finding::Cycle { path } = &report.findings[0] else { panic!("{report:?}") };
        assert_eq!(path.first(), path.last());
        assert_eq!(path.len(), 4);
    }

    #[test]
    fn unknown_hook_and_compose() {
        let mut def = NodeDef::new("a", "x").with_hook(HookRef::new("nonexistent"));
        def.compose = "rag".into();
        let report = validate_defs(&[def], &hooks(), None);
        assert_eq!(report.len(), 2);
    }

    #[test]
    fn schema_flags_undeclared_keys() {
        let defs = [NodeDef::new("reflect", "Has the player been making progress towards '$db.subgoals.subgoal$'?")];
        let lacking = DbSchema::new(["instruction_manual"]).unwrap();
        let report = validate_defs(&defs, &hooks(), Some(&lacking));
        assert_eq!(
            report.findings,
            [Finding::UnresolvedKey { node: "reflect".into(), path: "subgoals.subgoal".into() }]
        );
        let declared = DbSchema::new(["subgoals"]).unwrap();
        assert!(validate_defs(&defs, &hooks(), Some(&declared)).is_empty());
    }

    #[test]
    fn gate_branch_must_name_existing_nodes() {
        let defs = [
            NodeDef::new("gate", "").with_hook(HookRef::with_arg("gate_branch", "plan,missing")),
            NodeDef::new("plan", "").with_deps(["gate"]),
        ];
        let report = validate_defs(&defs, &hooks(), None);
        assert!(matches!(&report.findings[..], [Finding::HookArgument { .. }]));
    }
}
