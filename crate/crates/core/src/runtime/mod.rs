//! Evaluation of a single node: compose, query, after-query with retries.

mod compose;
mod hooks;
mod parse;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

pub use compose::{compose_db_only, compose_default, db_header, dependency_header, ComposeFn, ComposedPrompt, Segment, SegmentSource, SEPARATOR};
pub use hooks::{AfterQueryHook, HookContext, HookError, HookRegistry, ParseShape, PassThrough};
pub use parse::{flag, parse_structured_block, parse_yes_no, ExpectedShape, ParseError};

use crate::backend::{estimate_cost, BackendProfile, ChatBackend, CompletionRequest, Message, PriceTable, Usage};
use crate::graph::{EvalFailure, EvalRequest, Evaluated, NodeEvaluator, NodeFailure, NodeId, DEFAULT_COMPOSE};
use crate::store::Database;
use crate::template::{render_value, TemplateMode};
use crate::Value;

/// Result of evaluating a node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeOutput {
    pub node_id: NodeId,
    pub raw_answer: String,
    pub parsed: Value,
    pub retries_used: u32,
}

impl NodeOutput {
    /// An unparsed text answer.
    pub fn text(node_id: impl Into<NodeId>, answer: impl Into<String>) -> Self {
        let answer = answer.into();
        NodeOutput { node_id: node_id.into(), parsed: Value::String(answer.clone()), raw_answer: answer, retries_used: 0 }
    }

    /// The parsed output as it appears in downstream prompts.
    pub fn rendered(&self) -> String {
        render_value(&self.parsed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Limits {
    /// Model queries per node, counting the first one.
    pub max_retries: u32,
    pub template_mode: TemplateMode,
    /// Upper clamp for action repeats.
    pub max_repeats: u32,
}

impl Default for Limits {
    fn default() -> Self {
        Limits { max_retries: 3, template_mode: TemplateMode::Strict, max_repeats: 9 }
    }
}

/// Text appended as a user turn after a rejected answer.
pub fn corrective_turn(message: &str) -> String {
    format!("Your previous answer was invalid: {message}. Answer again following the required format.")
}

/// The standard [`NodeEvaluator`]: composes prompts, queries a backend and
/// runs after-query hooks.
pub struct Runtime<B> {
    backend: B,
    hooks: HookRegistry,
    profiles: BTreeMap<String, BackendProfile>,
    prices: PriceTable,
    limits: Limits,
    warnings: Vec<String>,
}

impl<B: ChatBackend> Runtime<B> {
    /// A runtime with the built-in hooks and a keyless `default` profile.
    pub fn new(backend: B) -> Self {
        let mut profiles = BTreeMap::new();
        profiles.insert(crate::graph::DEFAULT_MODEL.to_string(), BackendProfile::scripted(crate::graph::DEFAULT_MODEL));
        Runtime {
            backend,
            hooks: HookRegistry::builtin(),
            profiles,
            prices: PriceTable::default(),
            limits: Limits::default(),
            warnings: Vec::new(),
        }
    }

    pub fn with_hooks(mut self, hooks: HookRegistry) -> Self {
        self.hooks = hooks;
        self
    }

    pub fn with_profile(mut self, profile: BackendProfile) -> Self {
        self.profiles.insert(profile.id.clone(), profile);
        self
    }

    pub fn with_prices(mut self, prices: PriceTable) -> Self {
        self.prices = prices;
        self
    }

    pub fn with_limits(mut self, limits: Limits) -> Self {
        self.limits = limits;
        self
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn backend_mut(&mut self) -> &mut B {
        &mut self.backend
    }

    pub fn hooks(&self) -> &HookRegistry {
        &self.hooks
    }

    pub fn hooks_mut(&mut self) -> &mut HookRegistry {
        &mut self.hooks
    }

    pub fn limits(&self) -> &Limits {
        &self.limits
    }

    pub fn into_backend(self) -> B {
        self.backend
    }

    /// Template warnings collected since the last call.
    pub fn take_warnings(&mut self) -> Vec<String> {
        core::mem::take(&mut self.warnings)
    }
}

impl<B: ChatBackend> NodeEvaluator for Runtime<B> {
    fn evaluate(&mut self, req: EvalRequest<'_>, db: &mut Database) -> Result<Evaluated, EvalFailure> {
        let node = req.node;
        let compose = if node.compose == DEFAULT_COMPOSE {
            compose_default as ComposeFn
        } else {
            self.hooks
                .compose(&node.compose)
                .ok_or_else(|| EvalFailure::new(NodeFailure::UnknownCompose(node.compose.clone())))?
        };
        let composed = compose(node, req.deps, db, self.limits.template_mode)
            .map_err(|e| EvalFailure::new(NodeFailure::Template(e)))?;
        for w in &composed.warnings {
            self.warnings.push(format!("node `{}`: unresolved template key `{w}` left empty", node.id));
        }
        let fail = |cause, last_answer, retries, usage| EvalFailure {
            cause,
            composed: composed.rendered_text.clone(),
            last_answer,
            retries,
            usage,
        };
        let Some(profile) = self.profiles.get(&node.model) else {
            return Err(fail(NodeFailure::UnknownProfile(node.model.clone()), None, 0, Usage::default()));
        };
        let hook = match &node.after_query {
            None => None,
            Some(h) => match self.hooks.get(&h.id) {
                Some(hook) => Some(hook),
                None => return Err(fail(NodeFailure::UnknownHook(h.id.clone()), None, 0, Usage::default())),
            },
        };

        let mut messages = Vec::with_capacity(2);
        if let Some(system) = &composed.system {
            messages.push(Message::system(system.clone()));
        }
        messages.push(Message::user(composed.rendered_text.clone()));
        let max_attempts = self.limits.max_retries.max(1);
        let mut usage = Usage::default();
        let mut attempt = 0;
        loop {
            attempt += 1;
            let call = CompletionRequest { messages: &messages, node: Some(node.id.as_str()), pass: Some(req.pass) };
            let completion = match self.backend.complete(&call, profile) {
                Ok(c) => c,
                Err(e) => return Err(fail(NodeFailure::Backend(e), None, attempt - 1, usage)),
            };
            let mut call_usage = completion.usage;
            call_usage.cost = estimate_cost(&call_usage, &profile.model, &self.prices).unwrap_or(0.0);
            usage += call_usage;
            let answer = completion.text;

            let Some(hook) = hook else {
                return Ok(Evaluated {
                    output: NodeOutput::text(node.id.clone(), answer),
                    composed: composed.rendered_text,
                    usage,
                    ops: Vec::new(),
                });
            };
            let mut cx = HookContext::new(node, &answer, db, req.nodes, &self.limits);
            cx.pass = req.pass;
            match hook.run(&mut cx) {
                Ok(parsed) => {
                    let HookContext { writes, ops, .. } = cx;
                    if let Err(e) = db.commit(writes) {
                        return Err(fail(NodeFailure::Hook(e.to_string()), Some(answer), attempt - 1, usage));
                    }
                    return Ok(Evaluated {
                        output: NodeOutput { node_id: node.id.clone(), raw_answer: answer, parsed, retries_used: attempt - 1 },
                        composed: composed.rendered_text,
                        usage,
                        ops,
                    });
                }
                Err(HookError::Fatal(msg)) => {
                    return Err(fail(NodeFailure::Hook(msg), Some(answer), attempt - 1, usage));
                }
                Err(HookError::Retry(msg)) => {
                    if attempt >= max_attempts {
                        let cause = NodeFailure::AfterQueryExhausted { attempts: attempt, last_message: msg };
                        return Err(fail(cause, Some(answer), attempt - 1, usage));
                    }
                    messages.push(Message::user(corrective_turn(&msg)));
                }
            }
        }
    }
}
