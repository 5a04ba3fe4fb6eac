use alloc::collections::{BTreeMap, BTreeSet, VecDeque};
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{join_path, Graph, NodeDef, NodeId};
use crate::backend::{BackendError, Usage};
use crate::runtime::NodeOutput;
use crate::store::{Database, OpRecord, PassTrace, TraceEntry};
use crate::template::TemplateError;
use crate::Value;

/// An inference-time edit to the graph, valid until the end of the pass.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DynamicOp {
    AddNode { node: NodeDef },
    AddEdge { from: NodeId, to: NodeId },
    RemoveEdge { from: NodeId, to: NodeId },
    RemoveNode { node: NodeId },
}

impl DynamicOp {
    pub fn add_node(node: NodeDef) -> Self {
        DynamicOp::AddNode { node: node.temporary() }
    }

    pub fn add_edge(from: impl Into<NodeId>, to: impl Into<NodeId>) -> Self {
        DynamicOp::AddEdge { from: from.into(), to: to.into() }
    }

    pub fn remove_edge(from: impl Into<NodeId>, to: impl Into<NodeId>) -> Self {
        DynamicOp::RemoveEdge { from: from.into(), to: to.into() }
    }

    pub fn remove_node(node: impl Into<NodeId>) -> Self {
        DynamicOp::RemoveNode { node: node.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OpRejection {
    #[error("dynamic ops are only accepted during a pass")]
    NotInPass,
    #[error("`{node}` was already evaluated in this pass; additions targeting it are rejected")]
    RejectedEvaluatedTarget { node: NodeId },
    #[error("`{node}` was already evaluated in this pass; removals touching it are rejected")]
    RejectedEvaluatedEndpoint { node: NodeId },
    #[error("cycle introduced: {}", join_path(.path))]
    CycleIntroduced { path: Vec<NodeId> },
    #[error("unknown node `{0}`")]
    UnknownNode(NodeId),
    #[error("node `{0}` already exists")]
    DuplicateId(NodeId),
    #[error("edge {from} -> {to} does not exist")]
    NoSuchEdge { from: NodeId, to: NodeId },
    #[error("edge {from} -> {to} already exists")]
    EdgeExists { from: NodeId, to: NodeId },
    #[error("dynamic node budget of {limit} exhausted")]
    BudgetExhausted { limit: usize },
}

/// Why a single node could not produce an output.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum NodeFailure {
    #[error("after-query failed after {attempts} attempt(s): {last_message}")]
    AfterQueryExhausted { attempts: u32, last_message: String },
    #[error("after-query hook failed: {0}")]
    Hook(String),
    #[error("backend error: {0}")]
    Backend(BackendError),
    #[error("template error: {0}")]
    Template(TemplateError),
    #[error("unknown after-query hook `{0}`")]
    UnknownHook(String),
    #[error("unknown compose hook `{0}`")]
    UnknownCompose(String),
    #[error("unknown backend profile `{0}`")]
    UnknownProfile(String),
    #[error("dynamic node budget of {limit} exhausted")]
    DynamicBudgetExhausted { limit: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PassError {
    #[error("node `{node}` failed: {cause}")]
    NodeEvaluationFailed { node: NodeId, cause: NodeFailure },
    #[error("traversal stalled with unevaluated nodes: {}", join_path(.remaining))]
    StalledTraversal { remaining: Vec<NodeId> },
    #[error("node `{node}` depends on unknown node `{dep}`")]
    NotRunnable { node: NodeId, dep: NodeId },
    #[error("a pass is already running on this graph")]
    AlreadyRunning,
    #[error("temporary node rejected: {0}")]
    TemporaryNode(OpRejection),
}

/// A failed pass: the error plus the trace recorded up to the failure.
#[derive(Debug, Clone, PartialEq)]
pub struct PassFailure {
    pub error: PassError,
    pub trace: PassTrace,
}

impl core::fmt::Display for PassFailure {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        self.error.fmt(f)
    }
}

impl core::error::Error for PassFailure {}

#[derive(Debug, Clone, Default)]
pub struct PassOptions {
    pub pass: u64,
    /// Extra nodes that exist for this pass only.
    pub temporary_nodes: Vec<NodeDef>,
}

impl PassOptions {
    pub fn new(pass: u64) -> Self {
        PassOptions { pass, temporary_nodes: Vec::new() }
    }
}

/// What the evaluator sees for one node.
pub struct EvalRequest<'a> {
    pub node: &'a NodeDef,
    /// Outputs of the node's effective dependencies, in declaration order.
    /// Skipped dependencies are absent.
    pub deps: &'a [NodeOutput],
    pub pass: u64,
    /// Ids of every live node in the effective graph.
    pub nodes: &'a BTreeSet<NodeId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluated {
    pub output: NodeOutput,
    pub composed: String,
    pub usage: Usage,
    pub ops: Vec<DynamicOp>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalFailure {
    pub cause: NodeFailure,
    pub composed: String,
    pub last_answer: Option<String>,
    pub retries: u32,
    pub usage: Usage,
}

impl EvalFailure {
    pub fn new(cause: NodeFailure) -> Self {
        EvalFailure {
            cause,
            composed: String::new(),
            last_answer: None,
            retries: 0,
            usage: Usage::default(),
        }
    }
}

/// Evaluates one node: compose, query, after-query.
pub trait NodeEvaluator {
    fn evaluate(&mut self, req: EvalRequest<'_>, db: &mut Database) -> Result<Evaluated, EvalFailure>;
}

impl<E: NodeEvaluator + ?Sized> NodeEvaluator for &mut E {
    fn evaluate(&mut self, req: EvalRequest<'_>, db: &mut Database) -> Result<Evaluated, EvalFailure> {
        (**self).evaluate(req, db)
    }
}

/// Temporary state of one pass. Dropping it reverts every dynamic change.
#[derive(Debug, Clone, Default)]
pub(super) struct Overlay {
    temp_nodes: BTreeMap<NodeId, NodeDef>,
    edges_added: Vec<(NodeId, NodeId)>,
    edges_removed: BTreeSet<(NodeId, NodeId)>,
    skipped: BTreeSet<NodeId>,
    pub(super) evaluated: BTreeSet<NodeId>,
    // Effective edge set and adjacency, kept in sync by every op.
    succ: BTreeMap<NodeId, BTreeSet<NodeId>>,
    pred: BTreeMap<NodeId, BTreeSet<NodeId>>,
    in_degree: BTreeMap<NodeId, usize>,
    frontier: VecDeque<NodeId>,
    dynamic_added: usize,
}

impl Overlay {
    fn start(graph: &Graph) -> Self {
        let mut ov = Overlay::default();
        for id in &graph.order {
            ov.succ.entry(id.clone()).or_default();
            ov.pred.entry(id.clone()).or_default();
        }
        for (from, to) in graph.edges() {
            ov.succ.get_mut(&from).unwrap().insert(to.clone());
            ov.pred.get_mut(&to).unwrap().insert(from);
        }
        for (id, preds) in &ov.pred {
            ov.in_degree.insert(id.clone(), preds.len());
        }
        // BTreeMap iteration gives the ascending-id tie-break.
        let ready: Vec<NodeId> =
            ov.in_degree.iter().filter(|(_, d)| **d == 0).map(|(id, _)| id.clone()).collect();
        ov.frontier.extend(ready);
        ov
    }

    fn live(&self, id: &NodeId) -> bool {
        self.succ.contains_key(id) && !self.skipped.contains(id)
    }

    fn has_edge(&self, from: &NodeId, to: &NodeId) -> bool {
        self.succ.get(from).is_some_and(|s| s.contains(to))
    }

    fn insert_edge(&mut self, from: &NodeId, to: &NodeId) {
        self.succ.get_mut(from).unwrap().insert(to.clone());
        self.pred.get_mut(to).unwrap().insert(from.clone());
    }

    fn drop_edge(&mut self, from: &NodeId, to: &NodeId) {
        self.succ.get_mut(from).unwrap().remove(to);
        self.pred.get_mut(to).unwrap().remove(from);
        self.edges_removed.insert((from.clone(), to.clone()));
    }

    fn release(&mut self, node: &NodeId) {
        let d = self.in_degree.get_mut(node).unwrap();
        *d -= 1;
        if *d == 0 {
            self.frontier.push_back(node.clone());
        }
    }

    /// Path `from -> ... -> to` in the effective graph, if any.
    fn path(&self, from: &NodeId, to: &NodeId) -> Option<Vec<NodeId>> {
        let mut parent: BTreeMap<&NodeId, &NodeId> = BTreeMap::new();
        let mut seen = BTreeSet::new();
        let mut queue = VecDeque::new();
        seen.insert(from);
        queue.push_back(from);
        while let Some(cur) = queue.pop_front() {
            if cur == to {
                let mut path = alloc::vec![cur.clone()];
                let mut at = cur;
                while let Some(p) = parent.get(at) {
                    path.push((*p).clone());
                    at = p;
                }
                path.reverse();
                return Some(path);
            }
            for next in &self.succ[cur] {
                if seen.insert(next) {
                    parent.insert(next, cur);
                    queue.push_back(next);
                }
            }
        }
        None
    }
}

impl Graph {
    fn effective_node(&self, id: &NodeId) -> Option<&NodeDef> {
        let ov = self.overlay.as_ref()?;
        self.nodes.get(id).or_else(|| ov.temp_nodes.get(id))
    }

    /// Effective dependencies of `id`: declared deps still wired, then
    /// dynamically added edges in insertion order.
    fn effective_deps(&self, id: &NodeId) -> Vec<NodeId> {
        let ov = self.overlay.as_ref().expect("mid-pass");
        let def = self.effective_node(id).expect("live node");
        let mut deps: Vec<NodeId> =
            def.deps.iter().filter(|d| ov.has_edge(d, id)).cloned().collect();
        for (from, to) in &ov.edges_added {
            if to == id && ov.has_edge(from, to) && !deps.contains(from) {
                deps.push(from.clone());
            }
        }
        deps
    }

    fn live_nodes(&self) -> BTreeSet<NodeId> {
        let ov = self.overlay.as_ref().expect("mid-pass");
        ov.succ.keys().filter(|id| !ov.skipped.contains(*id)).cloned().collect()
    }

    /// Applies an inference-time edit to the running pass.
    ///
    /// Additions may not target a node already evaluated in this pass;
    /// removals may not touch an evaluated endpoint. A rejected op leaves the
    /// graph unchanged.
    pub fn apply_dynamic_op(&mut self, op: DynamicOp) -> Result<(), OpRejection> {
        let budget = self.dynamic_budget;
        let permanent_ids: BTreeSet<NodeId> = self.nodes.keys().cloned().collect();
        let ov = self.overlay.as_mut().ok_or(OpRejection::NotInPass)?;
        match op {
            DynamicOp::AddNode { node: mut def } => {
                def.temporary = true;
                if def.check().is_err() {
                    return Err(OpRejection::UnknownNode(def.id));
                }
                if permanent_ids.contains(&def.id) || ov.temp_nodes.contains_key(&def.id) {
                    return Err(OpRejection::DuplicateId(def.id));
                }
                if let Some(missing) = def.deps.iter().find(|d| !ov.live(d)) {
                    return Err(OpRejection::UnknownNode(missing.clone()));
                }
                if ov.dynamic_added >= budget {
                    return Err(OpRejection::BudgetExhausted { limit: budget });
                }
                ov.dynamic_added += 1;
                let id = def.id.clone();
                ov.succ.insert(id.clone(), BTreeSet::new());
                ov.pred.insert(id.clone(), BTreeSet::new());
                let mut pending = 0;
                for dep in &def.deps {
                    ov.insert_edge(dep, &id);
                    if !ov.evaluated.contains(dep) {
                        pending += 1;
                    }
                }
                ov.in_degree.insert(id.clone(), pending);
                if pending == 0 {
                    ov.frontier.push_back(id.clone());
                }
                ov.temp_nodes.insert(id, def);
                Ok(())
            }
            DynamicOp::AddEdge { from, to } => {
                for n in [&from, &to] {
                    if !ov.live(n) {
                        return Err(OpRejection::UnknownNode(n.clone()));
                    }
                }
                if ov.evaluated.contains(&to) {
                    return Err(OpRejection::RejectedEvaluatedTarget { node: to });
                }
                if ov.has_edge(&from, &to) {
                    return Err(OpRejection::EdgeExists { from, to });
                }
                if from == to {
                    return Err(OpRejection::CycleIntroduced { path: alloc::vec![from, to] });
                }
                if let Some(mut path) = ov.path(&to, &from) {
                    path.push(to);
                    return Err(OpRejection::CycleIntroduced { path });
                }
                ov.insert_edge(&from, &to);
                ov.edges_removed.remove(&(from.clone(), to.clone()));
                if !ov.evaluated.contains(&from) {
                    *ov.in_degree.get_mut(&to).unwrap() += 1;
                    ov.frontier.retain(|n| *n != to);
                }
                ov.edges_added.push((from, to));
                Ok(())
            }
            DynamicOp::RemoveEdge { from, to } => {
                if !ov.has_edge(&from, &to) {
                    return Err(OpRejection::NoSuchEdge { from, to });
                }
                for n in [&from, &to] {
                    if ov.evaluated.contains(n) {
                        return Err(OpRejection::RejectedEvaluatedEndpoint { node: n.clone() });
                    }
                }
                ov.drop_edge(&from, &to);
                ov.release(&to);
                Ok(())
            }
            DynamicOp::RemoveNode { node } => {
                if !ov.live(&node) {
                    return Err(OpRejection::UnknownNode(node));
                }
                if ov.evaluated.contains(&node) {
                    return Err(OpRejection::RejectedEvaluatedEndpoint { node });
                }
                ov.skipped.insert(node.clone());
                ov.frontier.retain(|n| *n != node);
                let succs: Vec<NodeId> = ov.succ[&node].iter().cloned().collect();
                for m in succs {
                    ov.drop_edge(&node, &m);
                    ov.release(&m);
                }
                let preds: Vec<NodeId> = ov.pred[&node].iter().cloned().collect();
                for p in preds {
                    ov.drop_edge(&p, &node);
                }
                Ok(())
            }
        }
    }

    /// Runs one evaluation pass in Kahn order.
    ///
    /// The frontier is FIFO, seeded in ascending id order. Every live node is
    /// evaluated exactly once; nodes removed by a dynamic op are skipped.
    /// Temporary nodes and edges are reverted before returning, whether the
    /// pass succeeded or not.
    pub fn run_pass<E: NodeEvaluator + ?Sized>(
        &mut self,
        evaluator: &mut E,
        db: &mut Database,
        options: PassOptions,
    ) -> Result<PassTrace, PassFailure> {
        let mut trace = PassTrace::new(options.pass);
        if self.overlay.is_some() {
            return Err(PassFailure { error: PassError::AlreadyRunning, trace });
        }
        if let Some((node, dep)) = self.dangling_deps().into_iter().next() {
            return Err(PassFailure { error: PassError::NotRunnable { node, dep }, trace });
        }
        self.overlay = Some(Overlay::start(self));
        let result = self.drive(evaluator, db, options, &mut trace);
        self.overlay = None;
        match result {
            Ok(()) => Ok(trace),
            Err(error) => {
                if let PassError::NodeEvaluationFailed { node, cause } = &error {
                    trace.abort(node.clone(), cause.to_string());
                }
                Err(PassFailure { error, trace })
            }
        }
    }

    fn drive<E: NodeEvaluator + ?Sized>(
        &mut self,
        evaluator: &mut E,
        db: &mut Database,
        options: PassOptions,
        trace: &mut PassTrace,
    ) -> Result<(), PassError> {
        for def in options.temporary_nodes {
            self.apply_dynamic_op(DynamicOp::add_node(def)).map_err(PassError::TemporaryNode)?;
        }
        let mut outputs: BTreeMap<NodeId, NodeOutput> = BTreeMap::new();
        loop {
            let next = self.overlay.as_mut().unwrap().frontier.pop_front();
            let Some(id) = next else { break };
            let node = self.effective_node(&id).expect("frontier holds live nodes").clone();
            let deps: Vec<NodeOutput> = self
                .effective_deps(&id)
                .iter()
                .filter_map(|d| outputs.get(d).cloned())
                .collect();
            let nodes = self.live_nodes();
            let req = EvalRequest { node: &node, deps: &deps, pass: options.pass, nodes: &nodes };
            match evaluator.evaluate(req, db) {
                Ok(done) => {
                    let ov = self.overlay.as_mut().unwrap();
                    ov.evaluated.insert(id.clone());
                    let succs: Vec<NodeId> = ov.succ[&id].iter().cloned().collect();
                    for m in &succs {
                        ov.release(m);
                    }
                    let mut records = Vec::with_capacity(done.ops.len());
                    let mut budget_hit = None;
                    for op in done.ops {
                        let outcome = self.apply_dynamic_op(op.clone());
                        if let Err(OpRejection::BudgetExhausted { limit }) = outcome {
                            budget_hit = Some(limit);
                        }
                        records.push(OpRecord::new(op, outcome));
                    }
                    trace.push(TraceEntry {
                        node: id.clone(),
                        composed: done.composed,
                        raw_answer: done.output.raw_answer.clone(),
                        parsed: done.output.parsed.clone(),
                        retries: done.output.retries_used,
                        usage: done.usage,
                        ops: records,
                        error: None,
                    });
                    if let Some(limit) = budget_hit {
                        return Err(PassError::NodeEvaluationFailed {
                            node: id,
                            cause: NodeFailure::DynamicBudgetExhausted { limit },
                        });
                    }
                    outputs.insert(id, done.output);
                }
                Err(failure) => {
                    trace.push(TraceEntry {
                        node: id.clone(),
                        composed: failure.composed,
                        raw_answer: failure.last_answer.unwrap_or_default(),
                        parsed: Value::Null,
                        retries: failure.retries,
                        usage: failure.usage,
                        ops: Vec::new(),
                        error: Some(failure.cause.to_string()),
                    });
                    return Err(PassError::NodeEvaluationFailed { node: id, cause: failure.cause });
                }
            }
        }
        let ov = self.overlay.as_ref().unwrap();
        let remaining: Vec<NodeId> = ov
            .succ
            .keys()
            .filter(|id| !ov.skipped.contains(*id) && !ov.evaluated.contains(*id))
            .cloned()
            .collect();
        debug_assert!(remaining.is_empty(), "Kahn traversal stalled: {remaining:?}");
        if !remaining.is_empty() {
            return Err(PassError::StalledTraversal { remaining });
        }
        Ok(())
    }
}
