//! Blocking client for chat-completions-compatible HTTP endpoints.
//!
//! [`HttpProvider`] implements [`CompletionProvider`], so it plugs into semantic
//! generation, arbitration and diagnosis wherever a template provider would go.
//! Offline mode (the default) refuses every call before any socket is opened.
//!
//! Request body, one POST per attempt:
//!
//! ```json
//! {"model": "<model>",
//!  "messages": [{"role": "system", "content": "<system prompt>"},
//!               {"role": "user", "content": "<prompt payload as compact JSON>"}],
//!  "max_tokens": 450}
//! ```
//!
//! `max_tokens` is omitted when the role has no cap. The answer is read from
//! `choices[0].message.content`.

use std::sync::Mutex;
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use sactx_core::provider::{CompletionProvider, ProviderError, Role};

pub const SYSTEM_PROMPT: &str = "You assist operators of an industrial control process. The user message is a JSON \
object describing sensor behavior; follow its \"instructions\" field exactly and answer only in the requested format.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProviderConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the bearer token; `None` sends no Authorization header.
    pub api_key_env: Option<String>,
    pub timeout_secs: f64,
    pub max_retries: u32,
    /// Output cap for the summarization role.
    pub max_tokens_primary: Option<u32>,
    /// Output cap for diagnosis and arbitration; uncapped by default.
    pub max_tokens_secondary: Option<u32>,
    /// First backoff delay; doubles on every further retry.
    pub backoff_ms: u64,
    pub offline: bool,
}

impl Default for ProviderConfig {
    fn default() -> Self {
        Self {
            endpoint: "http://127.0.0.1:8000/v1/chat/completions".into(),
            model: "gpt-5-mini".into(),
            api_key_env: Some("OPENAI_API_KEY".into()),
            timeout_secs: 60.0,
            max_retries: 3,
            max_tokens_primary: Some(450),
            max_tokens_secondary: None,
            backoff_ms: 500,
            offline: true,
        }
    }
}

impl ProviderConfig {
    pub fn validate(&self) -> Result<(), ProviderError> {
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(ProviderError::Config(format!("timeout {} s is not positive", self.timeout_secs)));
        }
        if self.model.trim().is_empty() {
            return Err(ProviderError::Config("model name is empty".into()));
        }
        if !(self.endpoint.starts_with("http://") || self.endpoint.starts_with("https://")) {
            return Err(ProviderError::Config(format!("endpoint {:?} is not an http(s) URL", self.endpoint)));
        }
        Ok(())
    }

    pub fn max_tokens(&self, role: Role) -> Option<u32> {
        match role {
            Role::Primary => self.max_tokens_primary,
            Role::Secondary => self.max_tokens_secondary,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Ok,
    Rejected,
    TransportFailed,
}

/// Audit entry; exactly one per [`CompletionProvider::complete`] call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompletionRecord {
    /// SHA-256 of the request body (or of the payload when no request was built).
    pub request_digest: String,
    pub response: Option<String>,
    pub latency_ms: f64,
    pub attempts: u32,
    pub outcome: Outcome,
    pub error: Option<String>,
}

pub fn request_body(cfg: &ProviderConfig, role: Role, payload: &Value) -> Value {
    let mut body = json!({
        "model": cfg.model,
        "messages": [
            {"role": "system", "content": SYSTEM_PROMPT},
            {"role": "user", "content": payload.to_string()},
        ],
    });
    if let Some(n) = cfg.max_tokens(role) {
        body["max_tokens"] = json!(n);
    }
    body
}

/// Pulls `choices[0].message.content` out of a response body.
pub fn extract_text(body: &str) -> Result<String, ProviderError> {
    let v: Value = serde_json::from_str(body).map_err(|e| ProviderError::Rejected(format!("response is not JSON: {e}")))?;
    let text = v
        .pointer("/choices/0/message/content")
        .and_then(Value::as_str)
        .ok_or_else(|| ProviderError::Rejected("response has no choices[0].message.content string".into()))?;
    if text.trim().is_empty() {
        return Err(ProviderError::Rejected("response content is empty".into()));
    }
    Ok(text.to_string())
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

enum Attempt {
    Done(String),
    Retry(String),
    Fatal(String),
}

pub struct HttpProvider {
    cfg: ProviderConfig,
    agent: ureq::Agent,
    records: Mutex<Vec<CompletionRecord>>,
}

impl HttpProvider {
    pub fn new(cfg: ProviderConfig) -> Result<Self, ProviderError> {
        cfg.validate()?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(cfg.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { cfg, agent, records: Mutex::new(Vec::new()) })
    }

    pub fn config(&self) -> &ProviderConfig {
        &self.cfg
    }

    pub fn records(&self) -> Vec<CompletionRecord> {
        self.records.lock().expect("audit lock").clone()
    }

    pub fn take_records(&self) -> Vec<CompletionRecord> {
        std::mem::take(&mut *self.records.lock().expect("audit lock"))
    }

    fn api_key(&self) -> Result<Option<String>, ProviderError> {
        match &self.cfg.api_key_env {
            None => Ok(None),
            Some(var) => match std::env::var(var) {
                Ok(k) if !k.trim().is_empty() => Ok(Some(k)),
                _ => Err(ProviderError::Config(format!("environment variable {var} is not set"))),
            },
        }
    }

    fn attempt(&self, body: &str, key: Option<&str>) -> Attempt {
        let mut req = self.agent.post(&self.cfg.endpoint).content_type("application/json");
        if let Some(k) = key {
            req = req.header("Authorization", format!("Bearer {k}"));
        }
        let mut resp = match req.send(body) {
            Ok(r) => r,
            Err(e) => return Attempt::Retry(e.to_string()),
        };
        let status = resp.status().as_u16();
        let text = match resp.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Retry(format!("reading body: {e}")),
        };
        match status {
            200..=299 => Attempt::Done(text),
            408 | 429 | 500..=599 => Attempt::Retry(format!("HTTP {status}")),
            _ => Attempt::Fatal(format!("HTTP {status}: {}", text.chars().take(200).collect::<String>())),
        }
    }

    fn call(&self, role: Role, payload: &Value) -> (Result<String, ProviderError>, String, u32) {
        if self.cfg.offline {
            let err = ProviderError::Config("offline mode: use the template providers".into());
            return (Err(err), digest(payload.to_string().as_bytes()), 0);
        }
        let body = request_body(&self.cfg, role, payload).to_string();
        let dig = digest(body.as_bytes());
        let key = match self.api_key() {
            Ok(k) => k,
            Err(e) => return (Err(e), dig, 0),
        };
        let total = self.cfg.max_retries + 1;
        let mut last = String::new();
        for n in 1..=total {
            match self.attempt(&body, key.as_deref()) {
                Attempt::Done(text) => return (extract_text(&text), dig, n),
                Attempt::Fatal(msg) => return (Err(ProviderError::Transport { attempts: n, message: msg }), dig, n),
                Attempt::Retry(msg) => last = msg,
            }
            if n < total {
                thread::sleep(Duration::from_millis(self.cfg.backoff_ms.saturating_mul(1 << (n - 1).min(16))));
            }
        }
        (Err(ProviderError::Transport { attempts: total, message: last }), dig, total)
    }
}

impl CompletionProvider for HttpProvider {
    fn complete(&self, role: Role, payload: &Value) -> Result<String, ProviderError> {
        let clock = Instant::now();
        let (result, request_digest, attempts) = self.call(role, payload);
        let (response, outcome, error) = match &result {
            Ok(t) => (Some(t.clone()), Outcome::Ok, None),
            Err(ProviderError::Rejected(m)) => (None, Outcome::Rejected, Some(m.clone())),
            Err(e) => (None, Outcome::TransportFailed, Some(e.to_string())),
        };
        let record = CompletionRecord {
            request_digest,
            response,
            latency_ms: clock.elapsed().as_secs_f64() * 1e3,
            attempts,
            outcome,
            error,
        };
        self.records.lock().expect("audit lock").push(record);
        result
    }
}
