use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::backend::Usage;
use crate::graph::{DynamicOp, NodeId, OpRejection};
use crate::Value;

/// A dynamic op emitted by a node and what the engine did with it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpRecord {
    pub op: DynamicOp,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl OpRecord {
    pub fn new(op: DynamicOp, outcome: Result<(), OpRejection>) -> Self {
        match outcome {
            Ok(()) => OpRecord { op, accepted: true, reason: None },
            Err(e) => OpRecord { op, accepted: false, reason: Some(e.to_string()) },
        }
    }
}

/// One evaluated (or failed) node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub node: NodeId,
    pub composed: String,
    pub raw_answer: String,
    pub parsed: Value,
    pub retries: u32,
    pub usage: Usage,
    #[serde(default)]
    pub ops: Vec<OpRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbortMarker {
    pub node: NodeId,
    pub cause: String,
}

/// Everything one pass did, in evaluation order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct PassTrace {
    pub pass: u64,
    pub entries: Vec<TraceEntry>,
    pub aborted: Option<AbortMarker>,
}

impl PassTrace {
    pub fn new(pass: u64) -> Self {
        PassTrace { pass, entries: Vec::new(), aborted: None }
    }

    pub fn push(&mut self, entry: TraceEntry) {
        self.entries.push(entry);
    }

    pub fn abort(&mut self, node: NodeId, cause: String) {
        self.aborted = Some(AbortMarker { node, cause });
    }

    pub fn entry(&self, node: &str) -> Option<&TraceEntry> {
        self.entries.iter().find(|e| e.node == node)
    }

    /// Summed usage of every entry.
    pub fn totals(&self) -> Usage {
        self.entries.iter().map(|e| e.usage).sum()
    }
}
