use alloc::string::ToString;

use thiserror::Error;

use crate::graph::{DynamicOp, NodeDef, NodeId};
use crate::runtime::{parse_yes_no, AfterQueryHook, HookContext, HookError};
use crate::Value;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BranchError {
    #[error("unparseable answer: expected yes or no")]
    UnparseableAnswer,
}

/// The add op for whichever branch the answer selects, wired after `decider`.
pub fn conditional_branch(answer: &str, yes: &NodeDef, no: &NodeDef, decider: &NodeId) -> Result<DynamicOp, BranchError> {
    let chosen = match parse_yes_no(answer).ok_or(BranchError::UnparseableAnswer)? {
        true => yes,
        false => no,
    };
    let mut node = chosen.clone();
    if !node.deps.contains(decider) {
        node.deps.insert(0, decider.clone());
    }
    Ok(DynamicOp::add_node(node))
}

/// Adds one of two temporary nodes depending on a yes/no answer. Registered
/// programmatically because its nodes are not expressible as a hook argument.
pub struct ConditionalBranch {
    pub yes: NodeDef,
    pub no: NodeDef,
}

impl AfterQueryHook for ConditionalBranch {
    fn contract(&self) -> &str {
        "an answer starting with yes or no"
    }
    fn effects(&self) -> &str {
        "adds the matching branch node after this node"
    }
    fn run(&self, cx: &mut HookContext<'_>) -> Result<Value, HookError> {
        let op = conditional_branch(cx.answer, &self.yes, &self.no, &cx.node.id).map_err(|e| HookError::Retry(e.to_string()))?;
        let yes = matches!(&op, DynamicOp::AddNode { node } if node.id == self.yes.id);
        cx.emit(op);
        Ok(Value::Bool(yes))
    }
}
