//! Execution engine for agents built as directed acyclic graphs of
//! natural-language subtasks.
//!
//! A [`Graph`] holds permanent [`NodeDef`]s. Each call to
//! [`Graph::run_pass`] walks the graph in Kahn order, evaluating every node
//! through a [`NodeEvaluator`] (normally a [`Runtime`]). After-query hooks may
//! emit [`DynamicOp`]s that temporarily reshape the graph for the rest of the
//! pass; everything temporary is reverted when the pass ends.
//!
//! Nodes share a hierarchical [`Database`] addressed with `$db.path$`
//! placeholders. The [`agent`] module layers planning, reflection and
//! knowledge-base patterns on top, and [`env::MiniForage`] provides a small
//! deterministic world for end-to-end runs against a scripted model.
//!
//! The crate is `no_std` and only needs `alloc`. IO, HTTP and file formats
//! live in the `promptdag` companion crate.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod agent;
pub mod backend;
pub mod env;
pub mod graph;
pub mod runtime;
pub mod store;
pub mod template;

pub use backend::{
    estimate_cost, BackendError, BackendProfile, ChatBackend, Completion, CompletionRequest,
    Message, ModelRate, PriceTable, RetryPolicy, Role, Usage,
};
pub use backend::scripted::{Script, ScriptError, ScriptRule, ScriptedBackend};
pub use graph::{
    DynamicOp, EvalFailure, EvalRequest, Evaluated, Finding, Graph, GraphError, HookRef, NodeDef,
    NodeEvaluator, NodeFailure, NodeId, OpRejection, PassError, PassFailure, PassOptions,
    ValidationReport,
};
pub use runtime::{
    compose_default, parse_structured_block, AfterQueryHook, ComposedPrompt, ExpectedShape,
    HookContext, HookError, HookRegistry, Limits, NodeOutput, ParseError, Runtime, SegmentSource,
};
pub use store::{Database, DbPath, PassTrace, StepSummary, TraceEntry};

/// Values stored in the database and produced by parsing model answers.
pub type Value = serde_json::Value;
