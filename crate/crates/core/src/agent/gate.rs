use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use serde_json::Map;
use thiserror::Error;

use crate::graph::{DynamicOp, NodeId};
use crate::runtime::{flag, AfterQueryHook, ExpectedShape, HookContext, HookError};
use crate::Value;

pub const GATE_FIELDS: [&str; 7] = [
    "unexpected_encounters",
    "mistake",
    "correction_planned",
    "confused",
    "top_subgoal_completed",
    "top_subgoal_changed",
    "replan",
];

/// Fields whose truth means the plan needs updating. `correction_planned`
/// reports the past and is left out.
pub const DEFAULT_TRIGGERS: [&str; 6] = [
    "unexpected_encounters",
    "mistake",
    "confused",
    "top_subgoal_completed",
    "top_subgoal_changed",
    "replan",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct GateDecision {
    pub unexpected_encounters: bool,
    pub mistake: bool,
    pub correction_planned: bool,
    pub confused: bool,
    pub top_subgoal_completed: bool,
    pub top_subgoal_changed: bool,
    pub replan: bool,
}

impl GateDecision {
    /// Reads all seven fields; each must be a boolean or a yes/no answer.
    pub fn from_value(value: &Value) -> Result<Self, String> {
        let map = value.as_object().ok_or("expected a dictionary")?;
        let mut bits = [false; 7];
        for (bit, field) in bits.iter_mut().zip(GATE_FIELDS) {
            let v = map.get(field).ok_or_else(|| format!("missing field `{field}`"))?;
            *bit = flag(v).ok_or_else(|| format!("field `{field}` must be yes or no"))?;
        }
        let [unexpected_encounters, mistake, correction_planned, confused, top_subgoal_completed, top_subgoal_changed, replan] =
            bits;
        Ok(GateDecision {
            unexpected_encounters,
            mistake,
            correction_planned,
            confused,
            top_subgoal_completed,
            top_subgoal_changed,
            replan,
        })
    }

    pub fn get(&self, field: &str) -> Option<bool> {
        Some(match field {
            "unexpected_encounters" => self.unexpected_encounters,
            "mistake" => self.mistake,
            "correction_planned" => self.correction_planned,
            "confused" => self.confused,
            "top_subgoal_completed" => self.top_subgoal_completed,
            "top_subgoal_changed" => self.top_subgoal_changed,
            "replan" => self.replan,
            _ => return None,
        })
    }

    /// True iff no trigger field is set.
    pub fn should_skip<S: AsRef<str>>(&self, triggers: &[S]) -> bool {
        !triggers.iter().any(|t| self.get(t.as_ref()) == Some(true))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GateError {
    #[error("gate skip set names unknown node `{0}`")]
    MisconfiguredNodeSet(NodeId),
}

/// Remove ops for every node in `skip` when the decision calls for
/// skipping, otherwise nothing.
pub fn gate_branch<S: AsRef<str>>(
    decision: &GateDecision,
    skip: &[NodeId],
    triggers: &[S],
    live: &BTreeSet<NodeId>,
) -> Result<Vec<DynamicOp>, GateError> {
    if let Some(missing) = skip.iter().find(|n| !live.contains(*n)) {
        return Err(GateError::MisconfiguredNodeSet(missing.clone()));
    }
    if !decision.should_skip(triggers) {
        return Ok(Vec::new());
    }
    Ok(skip.iter().map(|n| DynamicOp::remove_node(n.clone())).collect())
}

/// Argument of the `gate_branch` hook: `node,node,...[;triggers=field,...]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GateArg {
    pub skip: Vec<NodeId>,
    pub triggers: Vec<String>,
}

impl GateArg {
    pub fn parse(arg: Option<&str>) -> Result<Self, String> {
        let arg = arg.ok_or("gate_branch needs a comma-separated list of nodes to skip")?;
        let (nodes, options) = match arg.split_once(';') {
            Some((n, o)) => (n, Some(o)),
            None => (arg, None),
        };
        let skip: Vec<NodeId> = nodes.split(',').map(str::trim).filter(|s| !s.is_empty()).map(NodeId::from).collect();
        if skip.is_empty() {
            return Err("gate_branch skip list is empty".into());
        }
        let triggers = match options {
            None => DEFAULT_TRIGGERS.iter().map(|s| s.to_string()).collect(),
            Some(o) => {
                let list = o.trim().strip_prefix("triggers=").ok_or("expected `triggers=` after `;`")?;
                let triggers: Vec<String> = list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
                if let Some(bad) = triggers.iter().find(|t| !GATE_FIELDS.contains(&t.as_str())) {
                    return Err(format!("unknown gate field `{bad}`"));
                }
                triggers
            }
        };
        Ok(GateArg { skip, triggers })
    }
}

/// Parses the gate answer, stores it at `gate.last` and skips the configured
/// nodes when nothing calls for an update.
pub struct GateBranchHook;

impl AfterQueryHook for GateBranchHook {
    fn contract(&self) -> &str {
        "a dictionary with the seven gate questions answered yes/no"
    }
    fn effects(&self) -> &str {
        "writes gate.last; emits remove_node for the skip set when no trigger is set"
    }
    fn check_arg(&self, arg: Option<&str>, exists: &dyn Fn(&str) -> bool) -> Result<(), String> {
        let parsed = GateArg::parse(arg)?;
        match parsed.skip.iter().find(|n| !exists(n.as_str())) {
            Some(n) => Err(format!("gate_branch skip set names unknown node `{n}`")),
            None => Ok(()),
        }
    }
    fn run(&self, cx: &mut HookContext<'_>) -> Result<Value, HookError> {
        let arg = GateArg::parse(cx.arg).map_err(HookError::Fatal)?;
        let parsed = cx.parse(&ExpectedShape::labeled(GATE_FIELDS))?;
        let decision = GateDecision::from_value(&parsed).map_err(HookError::Retry)?;
        let ops = gate_branch(&decision, &arg.skip, &arg.triggers, cx.nodes).map_err(|e| HookError::Fatal(e.to_string()))?;
        let mut record = Map::new();
        for field in GATE_FIELDS {
            record.insert(field.into(), Value::Bool(decision.get(field).unwrap_or(false)));
        }
        record.insert("skipped".into(), Value::Bool(!ops.is_empty()));
        let record = Value::Object(record);
        cx.write("gate.last", record.clone())?;
        cx.ops.extend(ops);
        Ok(record)
    }
}
