use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use byoc_core::classifier::BaselineConfig;
use byoc_core::llm::{Engine, HttpBackend, HttpConfig, LlmError, ScriptedBackend};
use byoc_core::textbudget::TokenCounter;
use byoc_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_STORE: &str = "byoc-store";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Backend(#[from] LlmError),
}

/// Where completions come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BackendChoice {
    Live,
    /// A JSON script file of canned replies.
    Mock(PathBuf),
}

impl FromStr for BackendChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.split_once(':') {
            _ if s == "live" => Ok(BackendChoice::Live),
            Some(("mock", path)) if !path.is_empty() => Ok(BackendChoice::Mock(path.into())),
            _ => Err(format!("expected `live` or `mock:<script file>`, got {s:?}")),
        }
    }
}

impl TryFrom<String> for BackendChoice {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BackendChoice> for String {
    fn from(b: BackendChoice) -> String {
        match b {
            BackendChoice::Live => "live".into(),
            BackendChoice::Mock(p) => format!("mock:{}", p.display()),
        }
    }
}

/// Settings file contents. Every field is optional; command-line flags
/// override the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GatewayConfig {
    pub store: Option<PathBuf>,
    pub port: Option<u16>,
    pub host: String,
    pub backend: Option<BackendChoice>,
    pub chars_per_token: f64,
    pub train: TrainConfig,
    pub baseline: BaselineConfig,
    pub llm: HttpConfig,
}

impl Default for GatewayConfig {
    fn default() -> Self {
        GatewayConfig {
            store: None,
            port: None,
            host: "127.0.0.1".into(),
            backend: None,
            chars_per_token: byoc_core::textbudget::DEFAULT_CHARS_PER_TOKEN,
            train: TrainConfig::default(),
            baseline: BaselineConfig::default(),
            llm: HttpConfig::default(),
        }
    }
}

impl GatewayConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg: GatewayConfig = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.chars_per_token.is_nan() || self.chars_per_token <= 0.0 {
            return Err(ConfigError::Invalid("chars_per_token must be positive".into()));
        }
        self.train
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("train: {e}")))?;
        if self.baseline.prompt_budget == 0 {
            return Err(ConfigError::Invalid("baseline.prompt_budget must be positive".into()));
        }
        Ok(())
    }

    pub fn counter(&self) -> TokenCounter {
        TokenCounter::heuristic(self.chars_per_token)
    }

    /// Builds the backend. The live credential is read from the environment.
    pub fn engine(&self, choice: &BackendChoice) -> Result<Engine, ConfigError> {
        let counter = self.counter();
        let backend: Arc<dyn byoc_core::llm::Backend> = match choice {
            BackendChoice::Live => {
                let mut http = self.llm.clone();
                http.apply_env();
                Arc::new(HttpBackend::new(http)?.with_counter(counter.clone()))
            }
            BackendChoice::Mock(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.clone(),
                    source,
                })?;
                Arc::new(ScriptedBackend::from_json(&text)?.with_counter(counter.clone()))
            }
        };
        Ok(Engine::new(backend).with_counter(counter))
    }
}
