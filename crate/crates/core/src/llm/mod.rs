//! Text-completion backends and the call path every prompt goes through.
//!
//! [`complete`] is the only way the rest of the crate talks to a model: it
//! validates the request, calls the [`Backend`] and appends the exchange to
//! the caller's [`Transcript`].

mod live;
mod mock;
mod transcript;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textbudget::TokenCounter;

pub use live::{HttpBackend, HttpConfig, API_KEY_ENV, ENDPOINT_ENV, MODEL_ENV};
pub use mock::{Matcher, ScriptEntry, ScriptedBackend};
pub use transcript::{Transcript, TranscriptEntry, TranscriptRecord};

pub const DEFAULT_MAX_OUTPUT_TOKENS: u32 = 512;

/// A backend together with the token counter used for budgeting.
#[derive(Clone)]
pub struct Engine {
    pub backend: Arc<dyn Backend>,
    pub counter: TokenCounter,
}

impl Engine {
    pub fn new(backend: Arc<dyn Backend>) -> Self {
        Engine {
            backend,
            counter: TokenCounter::default(),
        }
    }

    pub fn with_counter(mut self, counter: TokenCounter) -> Self {
        self.counter = counter;
        self
    }

    pub fn backend(&self) -> &dyn Backend {
        self.backend.as_ref()
    }
}

impl fmt::Debug for Engine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Engine")
            .field("backend", &self.backend.name())
            .field("counter", &self.counter)
            .finish()
    }
}

#[derive(Debug, Error)]
pub enum LlmError {
    #[error("backend configuration error: {0}")]
    Config(String),
    #[error("invalid completion request: {0}")]
    Precondition(String),
    #[error("backend error after {attempts} attempt(s) (status {status:?}): {message}")]
    Backend {
        status: Option<u16>,
        attempts: u32,
        message: String,
    },
    #[error("mock script has no entry matching a {purpose} request")]
    ScriptMismatch { purpose: PurposeTag },
    #[error("mock script exhausted at a {purpose} request")]
    ScriptUnderrun { purpose: PurposeTag },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PurposeTag {
    GenQuestion,
    InteractivePredict,
    Update,
    Predict,
    SummarizeChunk,
    Baseline,
}

impl PurposeTag {
    pub const ALL: [PurposeTag; 6] = [
        PurposeTag::GenQuestion,
        PurposeTag::InteractivePredict,
        PurposeTag::Update,
        PurposeTag::Predict,
        PurposeTag::SummarizeChunk,
        PurposeTag::Baseline,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PurposeTag::GenQuestion => "gen_question",
            PurposeTag::InteractivePredict => "interactive_predict",
            PurposeTag::Update => "update",
            PurposeTag::Predict => "predict",
            PurposeTag::SummarizeChunk => "summarize_chunk",
            PurposeTag::Baseline => "baseline",
        }
    }

    /// Classification runs greedy; question generation is sampled for variety.
    pub fn default_temperature(self) -> f64 {
        match self {
            PurposeTag::GenQuestion => 0.3,
            _ => 0.0,
        }
    }
}

impl fmt::Display for PurposeTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PurposeTag {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        PurposeTag::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| format!("unknown purpose tag {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        ChatMessage {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompletionRequest {
    pub purpose: PurposeTag,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_output_tokens: u32,
}

impl CompletionRequest {
    pub fn new(purpose: PurposeTag, messages: Vec<ChatMessage>) -> Self {
        CompletionRequest {
            purpose,
            messages,
            temperature: purpose.default_temperature(),
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), LlmError> {
        if !self.temperature.is_finite() || !(0.0..=2.0).contains(&self.temperature) {
            return Err(LlmError::Precondition(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if self.max_output_tokens == 0 {
            return Err(LlmError::Precondition("max_output_tokens must be positive".into()));
        }
        match self.messages.first() {
            None => return Err(LlmError::Precondition("request has no messages".into())),
            Some(m) if m.role != Role::System => {
                return Err(LlmError::Precondition("first message must be a system message".into()))
            }
            _ => {}
        }
        if let Some(i) = self.messages.iter().position(|m| m.content.is_empty()) {
            return Err(LlmError::Precondition(format!("message {i} is empty")));
        }
        Ok(())
    }

    /// All message contents, concatenated without separators.
    pub fn prompt_text(&self) -> String {
        self.messages.iter().map(|m| m.content.as_str()).collect()
    }

    pub fn digest(&self) -> String {
        use sha2::{Digest, Sha256};
        let bytes = serde_json::to_vec(self).expect("request serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Completion {
    pub text: String,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
}

/// A text-completion service. Implementations must be safe to share across
/// threads; recording is done by [`complete`], not by the backend.
pub trait Backend: Send + Sync {
    fn name(&self) -> &str;
    fn send(&self, request: &CompletionRequest) -> Result<Completion, LlmError>;
}

/// Validates `request`, sends it, and records the exchange.
pub fn complete(
    backend: &dyn Backend,
    transcript: &mut Transcript,
    request: CompletionRequest,
) -> Result<Completion, LlmError> {
    request.validate()?;
    let completion = backend.send(&request)?;
    tracing::debug!(
        backend = backend.name(),
        purpose = %request.purpose,
        prompt_tokens = completion.prompt_tokens,
        output_tokens = completion.output_tokens,
        "completion"
    );
    transcript.record(request, completion.clone());
    Ok(completion)
}
