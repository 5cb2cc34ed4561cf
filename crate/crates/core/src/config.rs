//! Tool configuration: where the repo is, what to upgrade to, which backend
//! answers prompts, how builds run, and the stop-condition knobs.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm_gateway::{Gateway, GatewayError, HttpBackend, PriceTable, ReplayBackend};

pub const DEFAULT_BUILD_CMD: &str = "mvn -q compile";
pub const DEFAULT_TEST_CMD: &str = "mvn -q test";
pub const DEFAULT_MAX_SAME_ERROR: u32 = 3;
pub const DEFAULT_ROUND_CAP: u32 = 25;
pub const DEFAULT_BUDGET_TOKENS: u64 = 8_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Replay { script: PathBuf },
    Http { endpoint: String, model: String, api_key_env: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolConfig {
    pub repo: PathBuf,
    pub target_version: String,
    pub migration_guide: Option<PathBuf>,
    pub backend: BackendSpec,
    pub build_cmd: String,
    pub test_cmd: String,
    pub max_same_error: u32,
    pub round_cap: u32,
    pub budget_tokens: u64,
    pub prices: PriceTable,
    pub prompt_pack: Option<PathBuf>,
    pub summarize_first: bool,
    /// Extra environment variables for build/test commands.
    pub extra_env: Vec<(String, String)>,
}

impl ToolConfig {
    pub fn new(repo: impl Into<PathBuf>, target_version: impl Into<String>, backend: BackendSpec) -> Self {
        ToolConfig {
            repo: repo.into(),
            target_version: target_version.into(),
            migration_guide: None,
            backend,
            build_cmd: DEFAULT_BUILD_CMD.to_string(),
            test_cmd: DEFAULT_TEST_CMD.to_string(),
            max_same_error: DEFAULT_MAX_SAME_ERROR,
            round_cap: DEFAULT_ROUND_CAP,
            budget_tokens: DEFAULT_BUDGET_TOKENS,
            prices: PriceTable::default(),
            prompt_pack: None,
            summarize_first: false,
            extra_env: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.repo.is_dir() {
            return Err(ConfigError::Invalid(format!("repo does not exist: {}", self.repo.display())));
        }
        if self.target_version.is_empty() {
            return Err(ConfigError::Invalid("target version is empty".into()));
        }
        if self.max_same_error < 1 {
            return Err(ConfigError::Invalid("max_same_error must be >= 1".into()));
        }
        if self.round_cap < 1 {
            return Err(ConfigError::Invalid("round_cap must be >= 1".into()));
        }
        if self.budget_tokens == 0 {
            return Err(ConfigError::Invalid("budget_tokens must be > 0".into()));
        }
        Ok(())
    }

    pub fn build_gateway(&self) -> Result<Gateway, GatewayError> {
        let backend: Box<dyn crate::llm_gateway::Backend> = match &self.backend {
            BackendSpec::Replay { script } => Box::new(ReplayBackend::from_file(script)?),
            BackendSpec::Http { endpoint, model, api_key_env } => {
                Box::new(HttpBackend::new(endpoint.clone(), model.clone(), api_key_env.clone()))
            }
        };
        Ok(Gateway::new(backend, self.prices))
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("cannot read config file: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse config file: {0}")]
    Parse(String),
}

/// The on-disk config file: every field optional so command-line flags can
/// fill or override the rest. Secrets never appear here, only the name of
/// the environment variable holding them.
#[derive(Debug, Clone, Default, Deserialize)]
pub struct ConfigFile {
    pub repo: Option<PathBuf>,
    pub target_version: Option<String>,
    pub migration_guide: Option<PathBuf>,
    pub build_cmd: Option<String>,
    pub test_cmd: Option<String>,
    pub max_same_error: Option<u32>,
    pub round_cap: Option<u32>,
    pub budget_tokens: Option<u64>,
    pub prompt_pack: Option<PathBuf>,
    pub backend: Option<BackendFileSpec>,
    pub prices: Option<PricesFileSpec>,
    #[serde(default)]
    pub env: Vec<EnvPair>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct BackendFileSpec {
    pub kind: String,
    pub script: Option<PathBuf>,
    pub endpoint: Option<String>,
    pub model: Option<String>,
    pub api_key_env: Option<String>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct PricesFileSpec {
    pub prompt: Option<f64>,
    pub completion: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
pub struct EnvPair {
    pub name: String,
    pub value: String,
}

impl ConfigFile {
    pub fn load(path: &std::path::Path) -> Result<ConfigFile, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn backend_spec(&self) -> Result<Option<BackendSpec>, ConfigError> {
        let Some(b) = &self.backend else {
            return Ok(None);
        };
        match b.kind.as_str() {
            "replay" => {
                let script = b
                    .script
                    .clone()
                    .ok_or_else(|| ConfigError::Invalid("replay backend needs 'script'".into()))?;
                Ok(Some(BackendSpec::Replay { script }))
            }
            "http" => Ok(Some(BackendSpec::Http {
                endpoint: b
                    .endpoint
                    .clone()
                    .ok_or_else(|| ConfigError::Invalid("http backend needs 'endpoint'".into()))?,
                model: b
                    .model
                    .clone()
                    .ok_or_else(|| ConfigError::Invalid("http backend needs 'model'".into()))?,
                api_key_env: b.api_key_env.clone().unwrap_or_else(|| "OPENAI_API_KEY".to_string()),
            })),
            other => Err(ConfigError::Invalid(format!("unknown backend kind '{other}'"))),
        }
    }
}
