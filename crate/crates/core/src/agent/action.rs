use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::runtime::{flag, AfterQueryHook, ExpectedShape, HookContext, HookError};
use crate::Value;

/// Database path holding the environment's action names.
pub const ACTIONS_PATH: &str = "env.actions";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionCommand {
    pub action: String,
    /// At least 1.
    pub repeats: u32,
    pub hazard: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActionError {
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("repeats must be positive (got {0})")]
    NonPositiveRepeats(i64),
    #[error("malformed action: {0}")]
    Malformed(String),
}

/// `"Move West"` and `"move-west"` both become `move_west`.
pub fn normalize_action(name: &str) -> String {
    name.trim()
        .chars()
        .map(|c| if c.is_whitespace() || c == '-' { '_' } else { c.to_ascii_lowercase() })
        .collect()
}

fn repeats_of(value: Option<&Value>) -> Result<i64, ActionError> {
    let Some(v) = value else { return Ok(1) };
    let n = match v {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().filter(|f| *f == (*f as i64) as f64).map(|f| f as i64)),
        Value::String(s) => s.trim().split(|c: char| !c.is_ascii_digit() && c != '-').next().and_then(|t| t.parse().ok()),
        _ => None,
    };
    n.ok_or_else(|| ActionError::Malformed(format!("repeats must be a whole number, got {v}")))
}

/// Validates a parsed actor answer against the declared actions and clamps
/// repeats to `1..=max_repeats`.
pub fn emit_action<S: AsRef<str>>(parsed: &Value, actions: &[S], max_repeats: u32) -> Result<ActionCommand, ActionError> {
    let map = parsed.as_object().ok_or_else(|| ActionError::Malformed("expected a dictionary".into()))?;
    let raw = map.get("action").and_then(Value::as_str).ok_or_else(|| ActionError::Malformed("missing `action`".into()))?;
    let action = normalize_action(raw);
    if !actions.iter().any(|a| a.as_ref() == action) {
        return Err(ActionError::UnknownAction(raw.to_string()));
    }
    let repeats = repeats_of(map.get("repeats"))?;
    if repeats < 1 {
        return Err(ActionError::NonPositiveRepeats(repeats));
    }
    let repeats = (repeats.min(i64::from(max_repeats.max(1)))) as u32;
    let hazard = map.get("hazard").and_then(flag).unwrap_or(false);
    Ok(ActionCommand { action, repeats, hazard })
}

/// Validates the actor's final answer and stores it at `action.current`.
/// An optional argument overrides the repeat clamp.
pub struct ActionEmitHook;

impl AfterQueryHook for ActionEmitHook {
    fn contract(&self) -> &str {
        "a dictionary with action, repeats and hazard"
    }
    fn effects(&self) -> &str {
        "writes action.current"
    }
    fn check_arg(&self, arg: Option<&str>, _: &dyn Fn(&str) -> bool) -> Result<(), String> {
        match arg {
            Some(a) if !a.parse::<u32>().is_ok_and(|n| n >= 1) => Err(format!("action_emit argument must be a positive integer (got `{a}`)")),
            _ => Ok(()),
        }
    }
    fn run(&self, cx: &mut HookContext<'_>) -> Result<Value, HookError> {
        let max = cx.arg.and_then(|a| a.parse().ok()).unwrap_or(cx.limits.max_repeats);
        let actions: Vec<&str> = cx
            .db
            .lookup(ACTIONS_PATH)
            .and_then(Value::as_array)
            .ok_or_else(|| HookError::Fatal(format!("`{ACTIONS_PATH}` is not set")))?
            .iter()
            .filter_map(Value::as_str)
            .collect();
        let parsed = cx.parse(&ExpectedShape::labeled(["action"]))?;
        let cmd = emit_action(&parsed, &actions, max).map_err(|e| {
            HookError::Retry(format!("{e}; valid actions are: {}", actions.join(", ")))
        })?;
        let value = serde_json::to_value(&cmd).map_err(|e| HookError::Fatal(e.to_string()))?;
        cx.write("action.current", value.clone())?;
        Ok(value)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    const ACTIONS: [&str; 4] = ["noop", "move_south", "do", "place_table"];

    #[test]
    fn appendix_style_answer() {
        let cmd = emit_action(&json!({"action": "move_south", "repeats": 1, "hazard": "no"}), &ACTIONS, 9).unwrap();
        assert_eq!(cmd, ActionCommand { action: "move_south".into(), repeats: 1, hazard: false });
    }

    #[test]
    fn zero_repeats_rejected() {
        assert_eq!(emit_action(&json!({"action": "do", "repeats": 0}), &ACTIONS, 9), Err(ActionError::NonPositiveRepeats(0)));
    }

    #[test]
    fn off_vocabulary_action_rejected() {
        assert_eq!(
            emit_action(&json!({"action": "fly", "repeats": 2, "hazard": "no"}), &ACTIONS, 9),
            Err(ActionError::UnknownAction("fly".into()))
        );
    }

    #[test]
    fn names_normalize_and_repeats_clamp() {
        let cmd = emit_action(&json!({"action": "Place Table", "repeats": "12 times", "hazard": "yes"}), &ACTIONS, 9).unwrap();
        assert_eq!((cmd.action.as_str(), cmd.repeats, cmd.hazard), ("place_table", 9, true));
        assert_eq!(emit_action(&json!({"action": "do"}), &ACTIONS, 9).unwrap().repeats, 1);
        assert!(matches!(emit_action(&json!({"action": "do", "repeats": "lots"}), &ACTIONS, 9), Err(ActionError::Malformed(_))));
    }
}
