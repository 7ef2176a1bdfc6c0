//! Chat-completions HTTP backend.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{Backend, Completion, CompletionRequest, LlmError};
use crate::textbudget::TokenCounter;

pub const ENDPOINT_ENV: &str = "BYOC_ENDPOINT";
pub const MODEL_ENV: &str = "BYOC_MODEL";
pub const API_KEY_ENV: &str = "BYOC_API_KEY";

const DEFAULT_ENDPOINT: &str = "https://api.openai.com/v1/chat/completions";
const DEFAULT_MODEL: &str = "gpt-3.5-turbo";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct HttpConfig {
    /// Full URL of the chat-completions route.
    pub endpoint: String,
    pub model: String,
    #[serde(skip)]
    pub api_key: Option<String>,
    pub max_retries: u32,
    pub backoff_base_ms: u64,
    pub timeout_secs: u64,
}

impl Default for HttpConfig {
    fn default() -> Self {
        HttpConfig {
            endpoint: DEFAULT_ENDPOINT.to_string(),
            model: DEFAULT_MODEL.to_string(),
            api_key: None,
            max_retries: 3,
            backoff_base_ms: 500,
            timeout_secs: 120,
        }
    }
}

impl HttpConfig {
    /// Defaults overridden by `BYOC_ENDPOINT`, `BYOC_MODEL` and `BYOC_API_KEY`.
    pub fn from_env() -> Self {
        let mut cfg = HttpConfig::default();
        cfg.apply_env();
        cfg
    }

    pub fn apply_env(&mut self) {
        if let Ok(v) = std::env::var(ENDPOINT_ENV) {
            self.endpoint = v;
        }
        if let Ok(v) = std::env::var(MODEL_ENV) {
            self.model = v;
        }
        if let Ok(v) = std::env::var(API_KEY_ENV) {
            if !v.is_empty() {
                self.api_key = Some(v);
            }
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    api_key: String,
    agent: ureq::Agent,
    counter: TokenCounter,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
    #[serde(default)]
    usage: Option<Usage>,
}

#[derive(Deserialize)]
struct Choice {
    message: ReplyMessage,
}

#[derive(Deserialize)]
struct ReplyMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct Usage {
    prompt_tokens: u64,
    completion_tokens: u64,
}

enum Failure {
    Transient(Option<u16>, String),
    Fatal(Option<u16>, String),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, LlmError> {
        let api_key = config
            .api_key
            .clone()
            .filter(|k| !k.is_empty())
            .ok_or_else(|| LlmError::Config(format!("missing credential: set {API_KEY_ENV}")))?;
        if config.endpoint.is_empty() {
            return Err(LlmError::Config("endpoint URL is empty".into()));
        }
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(config.timeout_secs)))
            .build()
            .into();
        Ok(HttpBackend {
            config,
            api_key,
            agent,
            counter: TokenCounter::default(),
        })
    }

    pub fn with_counter(mut self, counter: TokenCounter) -> Self {
        self.counter = counter;
        self
    }

    fn body(&self, request: &CompletionRequest) -> serde_json::Value {
        json!({
            "model": self.config.model,
            "messages": request.messages,
            "temperature": request.temperature,
            "max_tokens": request.max_output_tokens,
        })
    }

    fn attempt(&self, request: &CompletionRequest) -> Result<Completion, Failure> {
        let response = self
            .agent
            .post(&self.config.endpoint)
            .header("Authorization", &format!("Bearer {}", self.api_key))
            .send_json(self.body(request));
        let mut response = match response {
            Ok(r) => r,
            Err(e @ (ureq::Error::BadUri(_) | ureq::Error::Http(_))) => {
                return Err(Failure::Fatal(None, e.to_string()))
            }
            Err(e) => return Err(Failure::Transient(None, e.to_string())),
        };
        let status = response.status().as_u16();
        if status != 200 {
            let text = response.body_mut().read_to_string().unwrap_or_default();
            let message = format!("HTTP {status}: {}", text.chars().take(500).collect::<String>());
            return if status == 408 || status == 429 || status >= 500 {
                Err(Failure::Transient(Some(status), message))
            } else {
                Err(Failure::Fatal(Some(status), message))
            };
        }
        let parsed: ChatResponse = response
            .body_mut()
            .read_json()
            .map_err(|e| Failure::Fatal(Some(status), format!("malformed response body: {e}")))?;
        let text = parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| Failure::Fatal(Some(status), "response has no message content".into()))?;
        let (prompt_tokens, output_tokens) = match parsed.usage {
            Some(u) => (u.prompt_tokens, u.completion_tokens),
            None => (
                self.counter.count(&request.prompt_text()) as u64,
                self.counter.count(&text) as u64,
            ),
        };
        Ok(Completion {
            text,
            prompt_tokens,
            output_tokens,
        })
    }
}

impl Backend for HttpBackend {
    fn name(&self) -> &str {
        "live"
    }

    /// Transport failures and 408/429/5xx responses are retried up to
    /// `max_retries` times with exponential backoff.
    fn send(&self, request: &CompletionRequest) -> Result<Completion, LlmError> {
        let mut attempts = 0;
        loop {
            attempts += 1;
            match self.attempt(request) {
                Ok(c) => return Ok(c),
                Err(Failure::Fatal(status, message)) => {
                    return Err(LlmError::Backend {
                        status,
                        attempts,
                        message,
                    })
                }
                Err(Failure::Transient(status, message)) => {
                    if attempts > self.config.max_retries {
                        return Err(LlmError::Backend {
                            status,
                            attempts,
                            message,
                        });
                    }
                    let delay = self.config.backoff_base_ms.saturating_mul(1 << (attempts - 1));
                    tracing::warn!(attempts, ?status, %message, delay_ms = delay, "retrying completion");
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
        }
    }
}
