//! Chat-completions adapter with tool calling.
//!
//! The adapter talks to any chat-completions-compatible endpoint, maps
//! returned tool calls onto executor requests, and treats a reply without
//! tool calls as the final answer. Transport is pluggable: live HTTP,
//! cassette replay for offline tests, and a recording wrapper.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::agents::{Agent, AgentTurn, AgentTurnInput};
use crate::executor::CallRequest;

#[derive(Debug, Error)]
pub enum AdapterError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("malformed chat response: {0}")]
    MalformedResponse(String),
    #[error("cassette exhausted after {0} requests")]
    CassetteExhausted(usize),
    #[error("cassette request mismatch at index {0}")]
    CassetteMismatch(usize),
    #[error("i/o error: {0}")]
    Io(String),
}

/// Endpoint and sampling configuration for one model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatConfig {
    pub endpoint: String,
    pub model: String,
    /// Environment variable holding the API key; requests go unauthenticated
    /// when it is unset (fine for local endpoints).
    #[serde(default = "default_api_key_env")]
    pub api_key_env: String,
    /// `None` omits the field so the provider default applies.
    #[serde(default = "default_temperature")]
    pub temperature: Option<f64>,
    #[serde(default = "default_top_p")]
    pub top_p: Option<f64>,
    /// Pass-through reasoning-effort knob for models that support it.
    #[serde(default)]
    pub reasoning_effort: Option<String>,
    #[serde(default = "default_max_concurrent")]
    pub max_concurrent_requests: usize,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_api_key_env() -> String {
    "OPENAI_API_KEY".to_string()
}

fn default_temperature() -> Option<f64> {
    Some(0.0)
}

fn default_top_p() -> Option<f64> {
    Some(1.0)
}

fn default_max_concurrent() -> usize {
    4
}

fn default_timeout_secs() -> u64 {
    120
}

impl Default for ChatConfig {
    fn default() -> Self {
        Self {
            endpoint: "https://api.openai.com/v1".to_string(),
            model: "gpt-4.1".to_string(),
            api_key_env: default_api_key_env(),
            temperature: default_temperature(),
            top_p: default_top_p(),
            reasoning_effort: None,
            max_concurrent_requests: default_max_concurrent(),
            timeout_secs: default_timeout_secs(),
        }
    }
}

/// Counting semaphore bounding in-flight requests across episodes.
#[derive(Debug)]
pub struct RequestLimiter {
    permits: Mutex<usize>,
    released: Condvar,
}

impl RequestLimiter {
    pub fn new(max: usize) -> Arc<Self> {
        Arc::new(Self {
            permits: Mutex::new(max.max(1)),
            released: Condvar::new(),
        })
    }

    fn acquire(self: &Arc<Self>) -> LimiterGuard {
        let mut permits = self.permits.lock().unwrap();
        while *permits == 0 {
            permits = self.released.wait(permits).unwrap();
        }
        *permits -= 1;
        LimiterGuard {
            limiter: Arc::clone(self),
        }
    }
}

struct LimiterGuard {
    limiter: Arc<RequestLimiter>,
}

impl Drop for LimiterGuard {
    fn drop(&mut self) {
        *self.limiter.permits.lock().unwrap() += 1;
        self.limiter.released.notify_one();
    }
}

/// One request/response against the chat endpoint.
pub trait ChatTransport: Send {
    fn complete(&mut self, request: &Value) -> Result<Value, AdapterError>;
}

/// Live HTTP transport.
pub struct HttpTransport {
    config: ChatConfig,
    agent: ureq::Agent,
    limiter: Arc<RequestLimiter>,
}

impl HttpTransport {
    pub fn new(config: ChatConfig) -> Self {
        let limiter = RequestLimiter::new(config.max_concurrent_requests);
        Self::with_limiter(config, limiter)
    }

    /// Shares a limiter across transports so the request bound holds
    /// globally, not per episode.
    pub fn with_limiter(config: ChatConfig, limiter: Arc<RequestLimiter>) -> Self {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .into();
        Self {
            config,
            agent,
            limiter,
        }
    }
}

impl ChatTransport for HttpTransport {
    fn complete(&mut self, request: &Value) -> Result<Value, AdapterError> {
        let _permit = self.limiter.acquire();
        let url = format!(
            "{}/chat/completions",
            self.config.endpoint.trim_end_matches('/')
        );
        let mut builder = self
            .agent
            .post(&url)
            .header("content-type", "application/json");
        if let Ok(key) = std::env::var(&self.config.api_key_env) {
            if !key.is_empty() {
                builder = builder.header("authorization", &format!("Bearer {key}"));
            }
        }
        let mut response = builder
            .send_json(request)
            .map_err(|e| AdapterError::Transport(e.to_string()))?;
        let status = response.status().as_u16();
        if status >= 400 {
            let body = response
                .body_mut()
                .read_to_string()
                .unwrap_or_else(|_| "<unreadable body>".to_string());
            return Err(AdapterError::Http { status, body });
        }
        response
            .body_mut()
            .read_json::<Value>()
            .map_err(|e| AdapterError::MalformedResponse(e.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub request: Value,
    pub response: Value,
}

/// Recorded request/response pairs for offline replay.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Cassette {
    pub entries: Vec<CassetteEntry>,
}

impl Cassette {
    pub fn load(path: &Path) -> Result<Self, AdapterError> {
        let text = fs::read_to_string(path).map_err(|e| AdapterError::Io(e.to_string()))?;
        serde_json::from_str(&text).map_err(|e| AdapterError::Io(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<(), AdapterError> {
        let mut text =
            serde_json::to_string_pretty(self).map_err(|e| AdapterError::Io(e.to_string()))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| AdapterError::Io(e.to_string()))
    }
}

/// Serves recorded responses in order; with `verify_requests` every
/// incoming request must equal the recorded one byte-for-byte.
pub struct ReplayTransport {
    cassette: Cassette,
    cursor: usize,
    verify_requests: bool,
}

impl ReplayTransport {
    pub fn new(cassette: Cassette, verify_requests: bool) -> Self {
        Self {
            cassette,
            cursor: 0,
            verify_requests,
        }
    }

    pub fn from_file(path: &Path, verify_requests: bool) -> Result<Self, AdapterError> {
        Ok(Self::new(Cassette::load(path)?, verify_requests))
    }
}

impl ChatTransport for ReplayTransport {
    fn complete(&mut self, request: &Value) -> Result<Value, AdapterError> {
        let Some(entry) = self.cassette.entries.get(self.cursor) else {
            return Err(AdapterError::CassetteExhausted(self.cursor));
        };
        if self.verify_requests && &entry.request != request {
            return Err(AdapterError::CassetteMismatch(self.cursor));
        }
        self.cursor += 1;
        Ok(entry.response.clone())
    }
}

/// Passes through to an inner transport while recording every exchange.
/// The cassette sits behind a shared handle so it can be saved after the
/// agent has consumed the transport.
pub struct RecordingTransport<T: ChatTransport> {
    inner: T,
    cassette: Arc<Mutex<Cassette>>,
    path: PathBuf,
}

impl<T: ChatTransport> RecordingTransport<T> {
    pub fn new(inner: T, path: PathBuf) -> Self {
        Self {
            inner,
            cassette: Arc::new(Mutex::new(Cassette::default())),
            path,
        }
    }

    pub fn cassette_handle(&self) -> Arc<Mutex<Cassette>> {
        Arc::clone(&self.cassette)
    }

    pub fn save(&self) -> Result<(), AdapterError> {
        self.cassette.lock().unwrap().save(&self.path)
    }
}

impl<T: ChatTransport> ChatTransport for RecordingTransport<T> {
    fn complete(&mut self, request: &Value) -> Result<Value, AdapterError> {
        let response = self.inner.complete(request)?;
        self.cassette.lock().unwrap().entries.push(CassetteEntry {
            request: request.clone(),
            response: response.clone(),
        });
        Ok(response)
    }
}

/// Agent backed by a chat-completions endpoint with tool calling.
pub struct LlmAgent {
    config: ChatConfig,
    transport: Box<dyn ChatTransport>,
    messages: Vec<Value>,
    /// Tool-call ids from our last assistant turn, awaiting tool results.
    pending_call_ids: Vec<String>,
    notes: Vec<String>,
}

impl LlmAgent {
    pub fn new(config: ChatConfig, transport: Box<dyn ChatTransport>) -> Self {
        Self {
            config,
            transport,
            messages: Vec::new(),
            pending_call_ids: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn over_http(config: ChatConfig) -> Self {
        let transport = Box::new(HttpTransport::new(config.clone()));
        Self::new(config, transport)
    }

    /// Adapter-side anomalies observed during the episode (for example
    /// malformed tool-call arguments).
    pub fn notes(&self) -> &[String] {
        &self.notes
    }

    fn ensure_prompt(&mut self, input: &AgentTurnInput<'_>) {
        if self.messages.is_empty() {
            self.messages.push(json!({
                "role": "user",
                "content": input.prompt,
            }));
        }
    }

    /// Answers our pending tool calls with the responses the executor
    /// produced for them.
    fn sync_tool_results(&mut self, input: &AgentTurnInput<'_>) {
        if self.pending_call_ids.is_empty() {
            return;
        }
        let ids = std::mem::take(&mut self.pending_call_ids);
        if let Some(turn) = input.history.last() {
            for (id, response) in ids.iter().zip(turn.responses.iter()) {
                self.messages.push(json!({
                    "role": "tool",
                    "tool_call_id": id,
                    "content": response.wire_json().to_string(),
                }));
            }
        }
    }

    fn request_body(&self, tools: &Value) -> Value {
        let mut body = serde_json::Map::new();
        body.insert("model".into(), json!(self.config.model));
        body.insert("messages".into(), Value::Array(self.messages.clone()));
        body.insert("tools".into(), tools.clone());
        if let Some(t) = self.config.temperature {
            body.insert("temperature".into(), json!(t));
        }
        if let Some(p) = self.config.top_p {
            body.insert("top_p".into(), json!(p));
        }
        if let Some(effort) = &self.config.reasoning_effort {
            body.insert("reasoning_effort".into(), json!(effort));
        }
        Value::Object(body)
    }

    fn complete(&mut self, tools: &Value) -> Result<Value, AdapterError> {
        let body = self.request_body(tools);
        let response = self.transport.complete(&body)?;
        response
            .get("choices")
            .and_then(|c| c.get(0))
            .and_then(|c| c.get("message"))
            .cloned()
            .ok_or_else(|| {
                AdapterError::MalformedResponse("response has no choices[0].message".into())
            })
    }
}

/// Integer argument values may arrive as JSON numbers or numeric strings.
fn parse_arg_value(value: &Value) -> Option<i64> {
    match value {
        Value::Number(n) => n
            .as_i64()
            .or_else(|| n.as_f64().filter(|f| f.fract() == 0.0).map(|f| f as i64)),
        Value::String(s) => s.trim().parse().ok(),
        _ => None,
    }
}

fn parse_tool_calls(message: &Value) -> Result<Vec<(String, CallRequest)>, String> {
    let Some(calls) = message.get("tool_calls").and_then(Value::as_array) else {
        return Ok(Vec::new());
    };
    let mut parsed = Vec::with_capacity(calls.len());
    for (index, call) in calls.iter().enumerate() {
        let id = call
            .get("id")
            .and_then(Value::as_str)
            .map(str::to_string)
            .unwrap_or_else(|| format!("call_{index}"));
        let function = call
            .get("function")
            .ok_or_else(|| format!("tool call {index} has no function"))?;
        let fname = function
            .get("name")
            .and_then(Value::as_str)
            .ok_or_else(|| format!("tool call {index} has no name"))?
            .to_string();
        let raw_args = function
            .get("arguments")
            .ok_or_else(|| format!("tool call {index} has no arguments"))?;
        let args_value: Value = match raw_args {
            Value::String(s) => serde_json::from_str(s)
                .map_err(|e| format!("tool call {index} arguments are not JSON: {e}"))?,
            other => other.clone(),
        };
        let object = args_value
            .as_object()
            .ok_or_else(|| format!("tool call {index} arguments are not an object"))?;
        let mut args = BTreeMap::new();
        for (key, value) in object {
            let parsed_value = parse_arg_value(value)
                .ok_or_else(|| format!("tool call {index} argument '{key}' is not an integer"))?;
            args.insert(key.clone(), parsed_value);
        }
        parsed.push((id, CallRequest { fname, args }));
    }
    Ok(parsed)
}

impl Agent for LlmAgent {
    fn name(&self) -> &str {
        "llm"
    }

    fn next_turn(&mut self, input: AgentTurnInput<'_>) -> Result<AgentTurn, AdapterError> {
        self.ensure_prompt(&input);
        self.sync_tool_results(&input);
        let message = self.complete(input.tools)?;
        let content = message
            .get("content")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        match parse_tool_calls(&message) {
            Ok(calls) if !calls.is_empty() => {
                self.messages.push(message.clone());
                let (ids, requests) = calls.into_iter().unzip();
                self.pending_call_ids = ids;
                Ok(AgentTurn::Calls(requests))
            }
            Ok(_) => {
                self.messages.push(message.clone());
                Ok(AgentTurn::Answer(content))
            }
            Err(problem) => {
                // malformed tool-call JSON: record it, drop the calls, and
                // let the runner move to the final answer
                self.notes.push(problem);
                self.messages.push(json!({
                    "role": "assistant",
                    "content": content,
                }));
                Ok(AgentTurn::Calls(Vec::new()))
            }
        }
    }

    fn final_answer(&mut self, input: AgentTurnInput<'_>) -> Result<String, AdapterError> {
        self.ensure_prompt(&input);
        self.sync_tool_results(&input);
        self.messages.push(json!({
            "role": "user",
            "content": "No further function calls are possible. Reply with your final answer for the target variable.",
        }));
        let message = self.complete(input.tools)?;
        let content = message
            .get("content")
            .and_then(Value::as_str)
            .unwrap_or_default()
            .to_string();
        self.messages.push(message);
        Ok(content)
    }
}
