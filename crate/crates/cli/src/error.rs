//! One error type for both surfaces: an HTTP status plus `ApiError` body for
//! the service, an exit code plus stderr message for the CLI.

use docsift::dense::DenseError;
use docsift::dual::DualError;
use docsift::ingest::IngestError;
use docsift::llm::LlmError;
use docsift::pipelines::{ClassifyError, PipelineError};
use docsift::sparse::SparseError;
use docsift::store::StoreError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::ConfigError;

/// Body of every non-2xx service response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: String,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub detail: Option<Value>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Class {
    BadRequest,
    NotFound,
    Conflict,
    Unavailable,
    BadGateway,
    Internal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppError {
    pub class: Class,
    pub body: ApiError,
}

impl AppError {
    pub fn new(class: Class, code: &str, message: impl Into<String>) -> Self {
        AppError {
            class,
            body: ApiError {
                code: code.into(),
                message: message.into(),
                detail: None,
            },
        }
    }

    pub fn with_detail(mut self, detail: Value) -> Self {
        self.body.detail = Some(detail);
        self
    }

    pub fn invalid(message: impl Into<String>) -> Self {
        AppError::new(Class::BadRequest, "invalid_request", message)
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        AppError::new(Class::NotFound, "not_found", message)
    }

    pub fn internal(message: impl Into<String>) -> Self {
        AppError::new(Class::Internal, "internal", message)
    }

    pub fn status(&self) -> u16 {
        match self.class {
            Class::BadRequest => 400,
            Class::NotFound => 404,
            Class::Conflict => 409,
            Class::Unavailable => 503,
            Class::BadGateway => 502,
            Class::Internal => 500,
        }
    }

    /// 1 for problems the caller can fix, 2 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self.class {
            Class::BadRequest | Class::NotFound | Class::Conflict => 1,
            Class::Unavailable | Class::BadGateway | Class::Internal => 2,
        }
    }
}

impl std::fmt::Display for AppError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.body.code, self.body.message)
    }
}

impl std::error::Error for AppError {}

impl From<ConfigError> for AppError {
    fn from(e: ConfigError) -> Self {
        AppError::new(Class::BadRequest, "config_error", e.to_string())
    }
}

impl From<LlmError> for AppError {
    fn from(e: LlmError) -> Self {
        match &e {
            LlmError::BackendUnavailable(_) => AppError::new(Class::Unavailable, "backend_unavailable", e.to_string()),
            LlmError::InvalidRequest(_) => AppError::invalid(e.to_string()),
            LlmError::Network(_) | LlmError::HttpStatus { .. } | LlmError::Malformed(_) => {
                AppError::new(Class::BadGateway, "backend_error", e.to_string())
            }
        }
    }
}

impl From<SparseError> for AppError {
    fn from(e: SparseError) -> Self {
        match e {
            SparseError::Parse(p) => AppError::new(Class::BadRequest, "parse_error", p.to_string())
                .with_detail(json!({ "position": p.position, "kind": p.kind })),
            SparseError::EmptyQuery | SparseError::PureNegationQuery | SparseError::InvalidPaging(_) => {
                AppError::invalid(e.to_string())
            }
            SparseError::Embed(e) => AppError::new(Class::BadGateway, "embedder_error", e.to_string()),
            other => AppError::internal(other.to_string()),
        }
    }
}

impl From<DenseError> for AppError {
    fn from(e: DenseError) -> Self {
        match e {
            DenseError::Embed(e) => AppError::new(Class::BadGateway, "embedder_error", e.to_string()),
            other => AppError::internal(other.to_string()),
        }
    }
}

impl From<DualError> for AppError {
    fn from(e: DualError) -> Self {
        match e {
            DualError::Sparse(e) => e.into(),
            DualError::Dense(e) => e.into(),
            other => AppError::internal(other.to_string()),
        }
    }
}

impl From<IngestError> for AppError {
    fn from(e: IngestError) -> Self {
        match e {
            IngestError::Io { .. } | IngestError::UnsupportedFormat(_) | IngestError::InvalidParams(_) => {
                AppError::invalid(e.to_string())
            }
        }
    }
}

impl From<StoreError> for AppError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Sparse(e) => e.into(),
            StoreError::Dense(e) => e.into(),
            StoreError::Dual(e) => e.into(),
            StoreError::Ingest(e) => e.into(),
            StoreError::NotInitialized(_) => AppError::new(Class::BadRequest, "store_not_initialized", e.to_string()),
            StoreError::AlreadyExists(_) => AppError::new(Class::Conflict, "store_exists", e.to_string()),
            StoreError::EmbedderMismatch { .. } => AppError::new(Class::BadRequest, "embedder_mismatch", e.to_string()),
            StoreError::ModeUnsupported { .. } => AppError::new(Class::BadRequest, "mode_unsupported", e.to_string()),
            StoreError::Corrupt(_) => AppError::new(Class::Internal, "store_corrupt", e.to_string()),
            StoreError::CommitAborted(_) | StoreError::Io(_) => AppError::internal(e.to_string()),
        }
    }
}

impl From<ClassifyError> for AppError {
    fn from(e: ClassifyError) -> Self {
        match e {
            ClassifyError::Embed(e) => AppError::new(Class::BadGateway, "embedder_error", e.to_string()),
            ClassifyError::Malformed(_) => AppError::new(Class::Internal, "model_corrupt", e.to_string()),
            other => AppError::invalid(other.to_string()),
        }
    }
}

impl From<PipelineError> for AppError {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Llm(e) => e.into(),
            PipelineError::Unit { index, source } => {
                let mut err = AppError::from(source);
                err.body.message = format!("unit {index}: {}", err.body.message);
                err.with_detail(json!({ "unit_index": index }))
            }
            PipelineError::Store(e) => e.into(),
            PipelineError::Ingest(e) => e.into(),
            PipelineError::Classify(e) => e.into(),
            PipelineError::Embed(e) => AppError::new(Class::BadGateway, "embedder_error", e.to_string()),
            PipelineError::Io(_) | PipelineError::Csv(_) => AppError::internal(e.to_string()),
            PipelineError::EmptyQuestion
            | PipelineError::EmptyInput(_)
            | PipelineError::Template(_)
            | PipelineError::TemplateVars { .. } => AppError::invalid(e.to_string()),
        }
    }
}

impl From<std::io::Error> for AppError {
    fn from(e: std::io::Error) -> Self {
        AppError::internal(format!("I/O error: {e}"))
    }
}
