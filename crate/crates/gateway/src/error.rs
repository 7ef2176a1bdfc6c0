use std::collections::BTreeMap;

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use byoc_core::classifier::ClassifyError;
use byoc_core::evalharness::EvalError;
use byoc_core::llm::LlmError;
use byoc_core::promptkit::PromptError;
use byoc_core::store::StoreError;
use byoc_core::trainer::TrainError;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Validation,
    State,
    Parse,
    Backend,
    NotFound,
}

impl ErrorCode {
    pub fn status(self) -> StatusCode {
        match self {
            ErrorCode::Validation => StatusCode::BAD_REQUEST,
            ErrorCode::State => StatusCode::CONFLICT,
            ErrorCode::Parse => StatusCode::UNPROCESSABLE_ENTITY,
            ErrorCode::Backend => StatusCode::BAD_GATEWAY,
            ErrorCode::NotFound => StatusCode::NOT_FOUND,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, thiserror::Error)]
#[error("{message}")]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub detail: BTreeMap<String, Value>,
}

impl ApiError {
    pub fn new(code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError {
            code,
            message: message.into(),
            detail: BTreeMap::new(),
        }
    }

    pub fn validation(message: impl Into<String>) -> Self {
        Self::new(ErrorCode::Validation, message)
    }

    pub fn with(mut self, key: &str, value: impl Into<Value>) -> Self {
        self.detail.insert(key.to_string(), value.into());
        self
    }
}

impl From<LlmError> for ApiError {
    fn from(e: LlmError) -> Self {
        let err = ApiError::new(ErrorCode::Backend, e.to_string());
        match e {
            LlmError::Backend {
                status, attempts, ..
            } => err.with("status", json!(status)).with("attempts", attempts),
            _ => err,
        }
    }
}

impl From<PromptError> for ApiError {
    fn from(e: PromptError) -> Self {
        match &e {
            PromptError::Parse { kind, missing } => ApiError::new(ErrorCode::Parse, e.to_string())
                .with("kind", kind.as_str())
                .with("missing", json!(missing)),
            PromptError::MissingPlaceholder(_) | PromptError::InvalidSpec(_) => {
                ApiError::validation(e.to_string())
            }
        }
    }
}

impl From<TrainError> for ApiError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Validation(m) => ApiError::validation(m),
            TrainError::State(m) | TrainError::Checkpoint(m) => ApiError::new(ErrorCode::State, m),
            TrainError::Unlabeled(ref ids) => {
                ApiError::new(ErrorCode::State, e.to_string()).with("unlabeled", json!(ids))
            }
            TrainError::Llm(e) => e.into(),
            TrainError::Prompt(e) => e.into(),
        }
    }
}

impl From<ClassifyError> for ApiError {
    fn from(e: ClassifyError) -> Self {
        match e {
            ClassifyError::NoMatch { ref raw } => {
                ApiError::new(ErrorCode::Parse, e.to_string()).with("raw_class", raw.as_str())
            }
            ClassifyError::EmptyInput | ClassifyError::Invalid(_) | ClassifyError::Budget { .. } => {
                ApiError::validation(e.to_string())
            }
            ClassifyError::Llm(e) => e.into(),
            ClassifyError::Prompt(e) => e.into(),
        }
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let code = match e {
            StoreError::NotFound { .. } => ErrorCode::NotFound,
            StoreError::Collision { .. }
            | StoreError::Migration { .. }
            | StoreError::Corrupt { .. } => ErrorCode::State,
            StoreError::InvalidId(_) | StoreError::Invalid(_) => ErrorCode::Validation,
            StoreError::Io { .. } => ErrorCode::Backend,
        };
        let err = ApiError::new(code, e.to_string());
        match e {
            StoreError::Migration { found, expected } => {
                err.with("found", found).with("expected", expected)
            }
            _ => err,
        }
    }
}

impl From<EvalError> for ApiError {
    fn from(e: EvalError) -> Self {
        ApiError::validation(e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.code.status(), Json(self)).into_response()
    }
}
