//! Client for OpenAI-compatible chat-completion endpoints.

use std::collections::HashMap;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use promptdag_core::backend::estimate_tokens;
use promptdag_core::{BackendError, BackendProfile, ChatBackend, Completion, CompletionRequest, Usage};
use serde_json::{json, Value};

/// Environment variable holding the API key.
pub const API_KEY_VAR: &str = "PROMPTDAG_API_KEY";
/// Environment variable that replaces every profile's endpoint.
pub const BASE_URL_VAR: &str = "PROMPTDAG_BASE_URL";

/// Token bucket refilled at `rate` tokens per second.
///
/// `take` always succeeds and returns how long the caller must wait before
/// sending. Tokens may go negative, which reserves future capacity for
/// callers already told to wait.
#[derive(Debug, Clone)]
pub struct TokenBucket {
    rate: f64,
    capacity: f64,
    tokens: f64,
    last: Option<Instant>,
}

impl TokenBucket {
    /// Burst capacity is `max(rate, 1)`; the bucket starts full.
    pub fn new(rate: f64) -> Self {
        let capacity = rate.max(1.0);
        TokenBucket { rate, capacity, tokens: capacity, last: None }
    }

    pub fn take(&mut self, now: Instant) -> Duration {
        if let Some(last) = self.last {
            let elapsed = now.saturating_duration_since(last).as_secs_f64();
            self.tokens = (self.tokens + elapsed * self.rate).min(self.capacity);
        }
        self.last = Some(now);
        self.tokens -= 1.0;
        if self.tokens >= 0.0 {
            Duration::ZERO
        } else {
            Duration::from_secs_f64(-self.tokens / self.rate)
        }
    }
}

struct Failure {
    error: BackendError,
    retryable: bool,
    retry_after: Option<Duration>,
}

/// HTTP backend. Shareable across threads: `request` takes `&self` and each
/// call is independent apart from per-profile rate limiting.
pub struct HttpBackend {
    agent: ureq::Agent,
    api_key: Option<String>,
    base_url: Option<String>,
    buckets: Mutex<HashMap<String, TokenBucket>>,
}

impl HttpBackend {
    pub fn new(api_key: Option<String>, base_url: Option<String>) -> Self {
        let agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
        HttpBackend { agent, api_key, base_url, buckets: Mutex::new(HashMap::new()) }
    }

    /// Reads [`API_KEY_VAR`] and [`BASE_URL_VAR`].
    pub fn from_env() -> Self {
        let var = |name| std::env::var(name).ok().filter(|v: &String| !v.is_empty());
        Self::new(var(API_KEY_VAR), var(BASE_URL_VAR))
    }

    fn url(&self, profile: &BackendProfile) -> Result<String, BackendError> {
        let base = self.base_url.as_deref().unwrap_or(&profile.endpoint);
        if base.is_empty() {
            return Err(BackendError::Transport(format!("profile `{}` has no endpoint", profile.id)));
        }
        Ok(format!("{}/chat/completions", base.trim_end_matches('/')))
    }

    fn throttle(&self, profile: &BackendProfile) {
        let Some(rps) = profile.rate_limit_rps.filter(|r| *r > 0.0) else { return };
        let wait = {
            let mut buckets = self.buckets.lock().unwrap_or_else(|e| e.into_inner());
            buckets.entry(profile.id.clone()).or_insert_with(|| TokenBucket::new(rps)).take(Instant::now())
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }

    fn send_once(&self, url: &str, body: &str, profile: &BackendProfile) -> Result<String, Failure> {
        let mut req = self
            .agent
            .post(url)
            .config()
            .timeout_global(Some(Duration::from_millis(profile.timeout_ms)))
            .build()
            .header("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.header("Authorization", format!("Bearer {key}"));
        }
        let transport = |error| Failure { error, retryable: true, retry_after: None };
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => return Err(transport(BackendError::Timeout)),
            Err(e) => return Err(transport(BackendError::Transport(e.to_string()))),
        };
        let status = resp.status().as_u16();
        let retry_after = resp
            .headers()
            .get("retry-after")
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<u64>().ok())
            .map(Duration::from_secs);
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => return Err(transport(BackendError::Timeout)),
            Err(e) => return Err(transport(BackendError::Transport(e.to_string()))),
        };
        if (200..300).contains(&status) {
            return Ok(text);
        }
        Err(Failure {
            error: BackendError::Status { status, body: text },
            retryable: status == 429 || status >= 500,
            retry_after,
        })
    }

    /// Sends one chat completion, retrying transport errors, timeouts, 5xx
    /// and 429 with exponential backoff. Other statuses fail at once.
    pub fn request(&self, req: &CompletionRequest<'_>, profile: &BackendProfile) -> Result<Completion, BackendError> {
        if req.messages.is_empty() {
            return Err(BackendError::EmptyMessages);
        }
        if profile.requires_key && self.api_key.is_none() {
            return Err(BackendError::MissingCredentials(profile.id.clone()));
        }
        let url = self.url(profile)?;
        let mut body = json!({
            "model": profile.model,
            "messages": req.messages,
            "temperature": profile.temperature,
        });
        if let Some(max) = profile.max_tokens {
            body["max_tokens"] = json!(max);
        }
        let body = body.to_string();
        let policy = profile.retry;
        let mut attempt = 0;
        loop {
            attempt += 1;
            self.throttle(profile);
            match self.send_once(&url, &body, profile) {
                Ok(text) => {
                    let mut completion = parse_response(&text, req)?;
                    completion.retries = attempt - 1;
                    return Ok(completion);
                }
                Err(f) if !f.retryable || attempt >= policy.max_attempts.max(1) => return Err(f.error),
                Err(f) => {
                    let backoff = Duration::from_millis(policy.backoff_ms(attempt));
                    std::thread::sleep(f.retry_after.map_or(backoff, |r| r.min(Duration::from_millis(policy.max_backoff_ms))));
                }
            }
        }
    }
}

impl ChatBackend for HttpBackend {
    fn complete(&mut self, req: &CompletionRequest<'_>, profile: &BackendProfile) -> Result<Completion, BackendError> {
        self.request(req, profile)
    }
}

/// First choice's text, with reported usage or a length estimate.
pub fn parse_response(text: &str, req: &CompletionRequest<'_>) -> Result<Completion, BackendError> {
    let v: Value = serde_json::from_str(text).map_err(|e| BackendError::Malformed(e.to_string()))?;
    let answer = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| BackendError::Malformed("missing choices[0].message.content".into()))?
        .to_string();
    let count = |key: &str| v.pointer(&format!("/usage/{key}")).and_then(Value::as_u64);
    let usage = Usage {
        prompt_tokens: count("prompt_tokens").unwrap_or_else(|| estimate_tokens(&req.prompt_text())),
        completion_tokens: count("completion_tokens").unwrap_or_else(|| estimate_tokens(&answer)),
        cost: 0.0,
    };
    Ok(Completion { text: answer, usage, retries: 0 })
}
