//! Model backend interface, profiles, and usage/cost accounting.

pub mod scripted;

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::iter::Sum;
use core::ops::{Add, AddAssign};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Message { role: Role::System, content: content.into() }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Message { role: Role::User, content: content.into() }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Message { role: Role::Assistant, content: content.into() }
    }
}

/// Token counts and estimated cost of one or more calls.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub cost: f64,
}

impl Usage {
    pub fn tokens(&self) -> u64 {
        self.prompt_tokens + self.completion_tokens
    }
}

impl Add for Usage {
    type Output = Usage;
    fn add(self, rhs: Usage) -> Usage {
        Usage {
            prompt_tokens: self.prompt_tokens + rhs.prompt_tokens,
            completion_tokens: self.completion_tokens + rhs.completion_tokens,
            cost: self.cost + rhs.cost,
        }
    }
}

impl AddAssign for Usage {
    fn add_assign(&mut self, rhs: Usage) {
        *self = *self + rhs;
    }
}

impl Sum for Usage {
    fn sum<I: Iterator<Item = Usage>>(iter: I) -> Usage {
        iter.fold(Usage::default(), Add::add)
    }
}

/// `ceil(chars / 4)`, the token estimate used when a backend reports none.
pub fn estimate_tokens(text: &str) -> u64 {
    (text.chars().count() as u64).div_ceil(4)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy { max_attempts: 4, initial_backoff_ms: 500, max_backoff_ms: 8_000 }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (1-based), doubling up to the cap.
    pub fn backoff_ms(&self, retry: u32) -> u64 {
        let shift = retry.saturating_sub(1).min(20);
        self.initial_backoff_ms.saturating_mul(1 << shift).min(self.max_backoff_ms)
    }
}

/// How to reach one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BackendProfile {
    pub id: String,
    /// Base URL of an OpenAI-compatible API, e.g. `https://api.openai.com/v1`.
    pub endpoint: String,
    pub model: String,
    pub temperature: f64,
    pub max_tokens: Option<u32>,
    pub timeout_ms: u64,
    pub retry: RetryPolicy,
    /// Requests per second allowed for this profile; unlimited when absent.
    pub rate_limit_rps: Option<f64>,
    /// Whether calls need an API key.
    pub requires_key: bool,
}

impl Default for BackendProfile {
    fn default() -> Self {
        BackendProfile {
            id: crate::graph::DEFAULT_MODEL.to_string(),
            endpoint: String::new(),
            model: String::new(),
            temperature: 0.0,
            max_tokens: None,
            timeout_ms: 60_000,
            retry: RetryPolicy::default(),
            rate_limit_rps: None,
            requires_key: true,
        }
    }
}

impl BackendProfile {
    pub fn scripted(id: impl Into<String>) -> Self {
        BackendProfile { id: id.into(), model: "scripted".into(), requires_key: false, ..Default::default() }
    }

    pub fn check(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0) {
            return Err(alloc::format!("profile `{}`: temperature must be >= 0", self.id));
        }
        if self.retry.max_attempts < 1 {
            return Err(alloc::format!("profile `{}`: max_attempts must be >= 1", self.id));
        }
        Ok(())
    }
}

/// Price per 1000 tokens.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelRate {
    pub input: f64,
    pub output: f64,
}

/// Model name -> rates.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(pub BTreeMap<String, ModelRate>);

impl PriceTable {
    pub fn with_rate(mut self, model: impl Into<String>, input: f64, output: f64) -> Self {
        self.0.insert(model.into(), ModelRate { input, output });
        self
    }

    pub fn rate(&self, model: &str) -> Option<ModelRate> {
        self.0.get(model).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CostError {
    #[error("no rate for model `{0}`")]
    UnknownModelRate(String),
}

/// `prompt/1000 * input_rate + completion/1000 * output_rate`.
pub fn estimate_cost(usage: &Usage, model: &str, prices: &PriceTable) -> Result<f64, CostError> {
    let rate = prices.rate(model).ok_or_else(|| CostError::UnknownModelRate(model.to_string()))?;
    Ok(usage.prompt_tokens as f64 / 1000.0 * rate.input + usage.completion_tokens as f64 / 1000.0 * rate.output)
}

/// One call to a model.
#[derive(Debug, Clone, Copy)]
pub struct CompletionRequest<'a> {
    pub messages: &'a [Message],
    /// Node being evaluated, if any.
    pub node: Option<&'a str>,
    pub pass: Option<u64>,
}

impl<'a> CompletionRequest<'a> {
    pub fn new(messages: &'a [Message]) -> Self {
        CompletionRequest { messages, node: None, pass: None }
    }

    pub fn prompt_text(&self) -> String {
        let parts: Vec<&str> = self.messages.iter().map(|m| m.content.as_str()).collect();
        parts.join("\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    /// Token counts; `cost` is filled in by the caller from a price table.
    pub usage: Usage,
    /// Transport-level retries spent on this call.
    pub retries: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("backend returned status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("missing credentials for profile `{0}`")]
    MissingCredentials(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("empty message list")]
    EmptyMessages,
    #[error("script: {0}")]
    Script(scripted::ScriptError),
}

/// A chat-completion model.
pub trait ChatBackend {
    fn complete(&mut self, req: &CompletionRequest<'_>, profile: &BackendProfile) -> Result<Completion, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for alloc::boxed::Box<B> {
    fn complete(&mut self, req: &CompletionRequest<'_>, profile: &BackendProfile) -> Result<Completion, BackendError> {
        (**self).complete(req, profile)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for &mut B {
    fn complete(&mut self, req: &CompletionRequest<'_>, profile: &BackendProfile) -> Result<Completion, BackendError> {
        (**self).complete(req, profile)
    }
}
