//! Deterministic stand-in model driven by a script of canned answers.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{estimate_tokens, BackendError, BackendProfile, ChatBackend, Completion, CompletionRequest, Usage};

/// Maps calls to a canned response.
///
/// Every given matcher must hold. Among ordinary rules exactly one may match
/// a call; `default` rules are only consulted when no ordinary rule matches.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ScriptRule {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub node: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    /// 1-based index of the call within the whole run.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ordinal: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pass: Option<u64>,
    #[serde(skip_serializing_if = "core::ops::Not::not")]
    pub default: bool,
    pub response: String,
}

impl ScriptRule {
    pub fn node(node: impl Into<String>, response: impl Into<String>) -> Self {
        ScriptRule { node: Some(node.into()), response: response.into(), ..Default::default() }
    }

    pub fn at_pass(mut self, pass: u64) -> Self {
        self.pass = Some(pass);
        self
    }

    pub fn at_ordinal(mut self, ordinal: u64) -> Self {
        self.ordinal = Some(ordinal);
        self
    }

    pub fn containing(mut self, text: impl Into<String>) -> Self {
        self.contains = Some(text.into());
        self
    }

    pub fn fallback(mut self) -> Self {
        self.default = true;
        self
    }

    fn matches(&self, req: &CompletionRequest<'_>, ordinal: u64, prompt: &str) -> bool {
        self.node.as_deref().is_none_or(|n| req.node == Some(n))
            && self.pass.is_none_or(|p| req.pass == Some(p))
            && self.ordinal.is_none_or(|o| o == ordinal)
            && self.contains.as_deref().is_none_or(|c| prompt.contains(c))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Script {
    pub rules: Vec<ScriptRule>,
}

impl Script {
    pub fn new(rules: impl IntoIterator<Item = ScriptRule>) -> Self {
        Script { rules: rules.into_iter().collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScriptError {
    #[error("call {ordinal} (node {node:?}, pass {pass:?}) matches no rule")]
    Unmatched { ordinal: u64, node: Option<String>, pass: Option<u64> },
    #[error("call {ordinal} (node {node:?}, pass {pass:?}) matches rules {rules:?}")]
    Ambiguous { ordinal: u64, node: Option<String>, pass: Option<u64>, rules: Vec<usize> },
}

/// Record of one scripted call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptedCall {
    pub ordinal: u64,
    pub node: Option<String>,
    pub pass: Option<u64>,
    pub rule: usize,
}

#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    script: Script,
    calls: Vec<ScriptedCall>,
}

impl ScriptedBackend {
    pub fn new(script: Script) -> Self {
        ScriptedBackend { script, calls: Vec::new() }
    }

    pub fn calls(&self) -> &[ScriptedCall] {
        &self.calls
    }

    fn pick(&self, req: &CompletionRequest<'_>, ordinal: u64) -> Result<usize, ScriptError> {
        let prompt = req.prompt_text();
        for fallback in [false, true] {
            let hits: Vec<usize> = self
                .script
                .rules
                .iter()
                .enumerate()
                .filter(|(_, r)| r.default == fallback && r.matches(req, ordinal, &prompt))
                .map(|(i, _)| i)
                .collect();
            match hits.len() {
                0 => continue,
                1 => return Ok(hits[0]),
                _ => {
                    return Err(ScriptError::Ambiguous {
                        ordinal,
                        node: req.node.map(String::from),
                        pass: req.pass,
                        rules: hits,
                    })
                }
            }
        }
        Err(ScriptError::Unmatched { ordinal, node: req.node.map(String::from), pass: req.pass })
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&mut self, req: &CompletionRequest<'_>, _profile: &BackendProfile) -> Result<Completion, BackendError> {
        if req.messages.is_empty() {
            return Err(BackendError::EmptyMessages);
        }
        let ordinal = self.calls.len() as u64 + 1;
        let rule = self.pick(req, ordinal).map_err(BackendError::Script)?;
        self.calls.push(ScriptedCall { ordinal, node: req.node.map(String::from), pass: req.pass, rule });
        let text = self.script.rules[rule].response.clone();
        let prompt_tokens = req.messages.iter().map(|m| estimate_tokens(&m.content)).sum();
        let usage = Usage { prompt_tokens, completion_tokens: estimate_tokens(&text), cost: 0.0 };
        Ok(Completion { text, usage, retries: 0 })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Message;
    use alloc::vec;

    fn call(b: &mut ScriptedBackend, node: &str, pass: u64, prompt: &str) -> Result<Completion, BackendError> {
        let msgs = vec![Message::user(prompt)];
        let req = CompletionRequest { messages: &msgs, node: Some(node), pass: Some(pass) };
        b.complete(&req, &BackendProfile::scripted("default"))
    }

    #[test]
    fn node_rule_echoes_canned_text() {
        let mut b = ScriptedBackend::new(Script::new([ScriptRule::node("n4", "pedestrian intends to cross")]));
        let c = call(&mut b, "n4", 0, "Identify the intentions of other road users").unwrap();
        assert_eq!(c.text, "pedestrian intends to cross");
        assert_eq!(c.usage.prompt_tokens, estimate_tokens("Identify the intentions of other road users"));
        assert_eq!(c.usage.completion_tokens, 7);
    }

    #[test]
    fn specific_rules_beat_defaults() {
        let mut b = ScriptedBackend::new(Script::new([
            ScriptRule::node("gate", "default").fallback(),
            ScriptRule::node("gate", "second pass").at_pass(2),
        ]));
        assert_eq!(call(&mut b, "gate", 1, "").unwrap().text, "default");
        assert_eq!(call(&mut b, "gate", 2, "").unwrap().text, "second pass");
    }

    #[test]
    fn unmatched_and_ambiguous_calls_fail() {
        let mut b = ScriptedBackend::new(Script::new([
            ScriptRule::node("a", "x").containing("wood"),
            ScriptRule::node("a", "y").containing("table"),
        ]));
        assert!(matches!(call(&mut b, "b", 0, "wood"), Err(BackendError::Script(ScriptError::Unmatched { .. }))));
        assert!(matches!(
            call(&mut b, "a", 0, "wood table"),
            Err(BackendError::Script(ScriptError::Ambiguous { .. }))
        ));
        assert_eq!(call(&mut b, "a", 0, "only table").unwrap().text, "y");
    }

    #[test]
    fn ordinal_counts_successful_calls() {
        let mut b = ScriptedBackend::new(Script::new([
            ScriptRule { ordinal: Some(1), response: "first".into(), ..Default::default() },
            ScriptRule { ordinal: Some(2), response: "second".into(), ..Default::default() },
        ]));
        assert_eq!(call(&mut b, "x", 0, "").unwrap().text, "first");
        assert_eq!(call(&mut b, "x", 0, "").unwrap().text, "second");
    }

    #[test]
    fn same_script_same_answers() {
        let script = Script::new([ScriptRule::node("a", "1"), ScriptRule::node("b", "2")]);
        let run = |s: &Script| {
            let mut b = ScriptedBackend::new(s.clone());
            ["a", "b", "a"].map(|n| call(&mut b, n, 0, "p").unwrap())
        };
        assert_eq!(run(&script), run(&script));
    }
}
