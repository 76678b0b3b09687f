//! One completion interface over interchangeable backends, with prompt
//! templates and schema-checked structured output.

pub mod http;
pub mod stub;
pub mod structured;
pub mod template;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::{HttpBackend, HttpBackendConfig};
pub use structured::{
    complete_structured, validate_structured, ExtractionSchema, FieldType, SchemaField, StructuredError,
    StructuredOutput, Validated, Violation,
};
pub use stub::{StubBackend, StubMode};
pub use template::{PromptTemplate, TemplateError};

pub const MAX_STOP_SEQUENCES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Stub,
    Http,
}

impl std::fmt::Display for BackendKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            BackendKind::Stub => "stub",
            BackendKind::Http => "http",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_tokens: u32,
    pub temperature: f64,
    pub stop: Vec<String>,
    pub backend_hint: Option<BackendKind>,
}

impl CompletionRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        CompletionRequest {
            prompt: prompt.into(),
            max_tokens: 512,
            temperature: 0.0,
            stop: Vec::new(),
            backend_hint: None,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if self.prompt.is_empty() {
            return Err(LlmError::InvalidRequest("prompt is empty".into()));
        }
        if !(self.temperature.is_finite() && self.temperature >= 0.0) {
            return Err(LlmError::InvalidRequest("temperature must be a finite value >= 0".into()));
        }
        if self.stop.len() > MAX_STOP_SEQUENCES {
            return Err(LlmError::InvalidRequest(format!(
                "at most {MAX_STOP_SEQUENCES} stop sequences"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinishReason {
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_units: u64,
    pub output_units: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub finish_reason: FinishReason,
    pub usage: Usage,
    pub backend_id: String,
    /// Set exactly when `finish_reason` is `Error`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_detail: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LlmError {
    #[error("network error: {0}")]
    Network(String),
    #[error("backend returned HTTP {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("malformed backend response: {0}")]
    Malformed(String),
}

pub trait LlmBackend: Send + Sync {
    fn kind(&self) -> BackendKind;

    /// Stable identifier reported in every `Completion`.
    fn id(&self) -> String;

    fn complete(&self, req: &CompletionRequest) -> Result<Completion, LlmError>;
}

/// Shorthand for a default request with `prompt`.
pub fn complete(backend: &dyn LlmBackend, prompt: &str) -> Result<Completion, LlmError> {
    backend.complete(&CompletionRequest::new(prompt))
}

/// The backends available to a running system. Without an explicit HTTP
/// endpoint the registry holds only the stub.
#[derive(Clone)]
pub struct BackendRegistry {
    default: BackendKind,
    stub: Arc<dyn LlmBackend>,
    http: Option<Arc<dyn LlmBackend>>,
}

impl std::fmt::Debug for BackendRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BackendRegistry")
            .field("default", &self.default)
            .field("members", &self.members())
            .finish()
    }
}

impl BackendRegistry {
    pub fn offline() -> Self {
        Self::with_stub(Arc::new(StubBackend::echo()))
    }

    pub fn with_stub(stub: Arc<dyn LlmBackend>) -> Self {
        BackendRegistry {
            default: BackendKind::Stub,
            stub,
            http: None,
        }
    }

    /// Adds an HTTP backend and makes it the default.
    pub fn with_http(mut self, http: Arc<dyn LlmBackend>) -> Self {
        self.http = Some(http);
        self.default = BackendKind::Http;
        self
    }

    pub fn members(&self) -> Vec<BackendKind> {
        let mut out = vec![BackendKind::Stub];
        if self.http.is_some() {
            out.push(BackendKind::Http);
        }
        out
    }

    pub fn default_kind(&self) -> BackendKind {
        self.default
    }

    pub fn get(&self, kind: BackendKind) -> Result<Arc<dyn LlmBackend>, LlmError> {
        match kind {
            BackendKind::Stub => Ok(self.stub.clone()),
            BackendKind::Http => self.http.clone().ok_or_else(|| {
                LlmError::BackendUnavailable("no http endpoint is configured; remote calls are opt-in".into())
            }),
        }
    }

    /// The hinted backend, or the default.
    pub fn resolve(&self, hint: Option<BackendKind>) -> Result<Arc<dyn LlmBackend>, LlmError> {
        self.get(hint.unwrap_or(self.default))
    }
}

pub(crate) fn count_units(text: &str) -> u64 {
    crate::sparse::analyzer::tokenize(text).len() as u64
}
