//! Client for chat-completions compatible servers (local inference servers
//! and hosted endpoints alike).
//!
//! Request body:
//! `{"model", "messages": [{"role": "user", "content": prompt}], "max_tokens", "temperature", "stop"?}`
//! (`stop` omitted when empty). Response fields read:
//! `choices[0].message.content`, `choices[0].finish_reason`,
//! `usage.prompt_tokens`, `usage.completion_tokens`.

use std::sync::{Condvar, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendKind, Completion, CompletionRequest, FinishReason, LlmBackend, LlmError, Usage};
use crate::net;

#[derive(Debug, Clone)]
pub struct HttpBackendConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    pub api_key: Option<String>,
    pub timeout: Duration,
    pub max_attempts: u32,
    pub backoff_base: Duration,
    pub max_in_flight: usize,
}

impl HttpBackendConfig {
    pub fn new(endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        HttpBackendConfig {
            endpoint: endpoint.into(),
            model: model.into(),
            api_key: None,
            timeout: Duration::from_secs(120),
            max_attempts: 3,
            backoff_base: Duration::from_millis(500),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug)]
struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore poisoned");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore poisoned");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore poisoned") += 1;
        self.0.cv.notify_one();
    }
}

pub struct HttpBackend {
    config: HttpBackendConfig,
    client: reqwest::blocking::Client,
    slots: Semaphore,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.config.endpoint)
            .field("model", &self.config.model)
            .finish_non_exhaustive()
    }
}

#[derive(Serialize)]
struct Message<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [Message<'a>; 1],
    max_tokens: u32,
    temperature: f64,
    #[serde(skip_serializing_if = "<[String]>::is_empty")]
    stop: &'a [String],
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChoiceMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

fn retryable(status: u16) -> bool {
    status == 429 || (500..600).contains(&status)
}

impl HttpBackend {
    pub fn new(config: HttpBackendConfig) -> Result<Self, LlmError> {
        if config.endpoint.trim().is_empty() {
            return Err(LlmError::BackendUnavailable("http backend requires an explicit endpoint".into()));
        }
        if config.max_attempts == 0 {
            return Err(LlmError::InvalidRequest("max_attempts must be at least 1".into()));
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| LlmError::BackendUnavailable(e.to_string()))?;
        Ok(HttpBackend {
            slots: Semaphore {
                free: Mutex::new(config.max_in_flight.max(1)),
                cv: Condvar::new(),
            },
            config,
            client,
        })
    }

    pub fn config(&self) -> &HttpBackendConfig {
        &self.config
    }

    fn attempt(&self, body: &ChatRequest<'_>) -> Result<Completion, LlmError> {
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(key) = &self.config.api_key {
            req = req.bearer_auth(key);
        }
        net::record_outbound_request();
        let resp = req.send().map_err(|e| LlmError::Network(e.to_string()))?;
        let status = resp.status().as_u16();
        let text = resp.text().map_err(|e| LlmError::Network(e.to_string()))?;
        if !(200..300).contains(&status) {
            return Err(LlmError::HttpStatus {
                status,
                body: net::excerpt(&text),
            });
        }
        let parsed: ChatResponse = serde_json::from_str(&text).map_err(|e| LlmError::Malformed(e.to_string()))?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| LlmError::Malformed("response has no choices".into()))?;
        let (finish_reason, error_detail) = match choice.finish_reason.as_deref() {
            None | Some("stop") => (FinishReason::Stop, None),
            Some("length") => (FinishReason::Length, None),
            Some(other) => (FinishReason::Error, Some(format!("finish_reason '{other}'"))),
        };
        let usage = parsed.usage.map_or(Usage::default(), |u| Usage {
            prompt_units: u.prompt_tokens,
            output_units: u.completion_tokens,
        });
        Ok(Completion {
            text: choice.message.content.unwrap_or_default(),
            finish_reason,
            usage,
            backend_id: self.id(),
            error_detail,
        })
    }
}

impl LlmBackend for HttpBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Http
    }

    fn id(&self) -> String {
        format!("http:{}@{}", self.config.model, self.config.endpoint)
    }

    fn complete(&self, req: &CompletionRequest) -> Result<Completion, LlmError> {
        req.validate()?;
        let body = ChatRequest {
            model: &self.config.model,
            messages: [Message {
                role: "user",
                content: &req.prompt,
            }],
            max_tokens: req.max_tokens,
            temperature: req.temperature,
            stop: &req.stop,
        };
        let _permit = self.slots.acquire();
        let mut delay = self.config.backoff_base;
        let mut attempt = 1;
        loop {
            match self.attempt(&body) {
                Err(LlmError::HttpStatus { status, body }) if retryable(status) && attempt < self.config.max_attempts => {
                    tracing::warn!(status, attempt, body = %body, "retrying completion");
                    std::thread::sleep(delay);
                    delay *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
