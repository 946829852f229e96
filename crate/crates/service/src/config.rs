//! Service configuration, loaded from TOML and validated before startup.
//!
//! ```toml
//! port = 8080
//! corpus_root = "corpus"
//! data_dir = "data"
//!
//! [prompt]
//! instructions = "..."            # optional, replaces the default text
//! [prompt.overrides]
//! "gemini-1.5-flash" = "..."      # optional, per model
//!
//! [[models]]
//! model_id = "gpt-4o"
//! provider = "openai"
//! model_name = "gpt-4o"
//! token_budget = 4096
//! ```

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use cpduet_core::provider::MockScript;
use cpduet_core::session::PromptTemplate;
use cpduet_core::{ModelConfig, ProviderKind};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_SUBSCRIBER_BUFFER: usize = 10_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Read { path: PathBuf, source: std::io::Error },
    #[error("invalid config {}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

/// One configured model slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSlot {
    #[serde(flatten)]
    pub model: ModelConfig,
    /// Script file for `mock` models; the mock echoes "hello" without one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_script: Option<PathBuf>,
    /// Override of the provider's endpoint, e.g. for a compatible proxy.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_url: Option<String>,
}

impl From<ModelConfig> for ModelSlot {
    fn from(model: ModelConfig) -> Self {
        Self {
            model,
            mock_script: None,
            base_url: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    #[serde(default)]
    pub instructions: Option<String>,
    #[serde(default)]
    pub overrides: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceConfig {
    #[serde(default = "default_port")]
    pub port: u16,
    #[serde(default)]
    pub corpus_root: Option<PathBuf>,
    #[serde(default = "default_data_dir")]
    pub data_dir: PathBuf,
    #[serde(default = "default_models")]
    pub models: Vec<ModelSlot>,
    #[serde(default)]
    pub prompt: PromptConfig,
    #[serde(default = "default_buffer")]
    pub subscriber_buffer: usize,
}

fn default_port() -> u16 {
    DEFAULT_PORT
}

fn default_data_dir() -> PathBuf {
    PathBuf::from("data")
}

fn default_models() -> Vec<ModelSlot> {
    ModelConfig::default_trio().into_iter().map(ModelSlot::from).collect()
}

fn default_buffer() -> usize {
    DEFAULT_SUBSCRIBER_BUFFER
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            port: DEFAULT_PORT,
            corpus_root: None,
            data_dir: default_data_dir(),
            models: default_models(),
            prompt: PromptConfig::default(),
            subscriber_buffer: DEFAULT_SUBSCRIBER_BUFFER,
        }
    }
}

impl ServiceConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text, path)
    }

    pub fn with_mock_models(ids: &[&str]) -> Self {
        Self {
            models: ids.iter().map(|id| ModelSlot::from(ModelConfig::mock(*id))).collect(),
            ..Self::default()
        }
    }

    pub fn model_configs(&self) -> Vec<ModelConfig> {
        self.models.iter().map(|s| s.model.clone()).collect()
    }

    pub fn default_template(&self) -> PromptTemplate {
        match &self.prompt.instructions {
            Some(text) => PromptTemplate {
                instructions: text.clone(),
            },
            None => PromptTemplate::default(),
        }
    }

    pub fn template_overrides(&self) -> BTreeMap<String, PromptTemplate> {
        self.prompt
            .overrides
            .iter()
            .map(|(id, text)| {
                (
                    id.clone(),
                    PromptTemplate {
                        instructions: text.clone(),
                    },
                )
            })
            .collect()
    }

    /// Checks everything that can be checked without binding the port.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if self.models.is_empty() {
            return invalid("at least one model must be configured".into());
        }
        let mut seen = HashSet::new();
        for slot in &self.models {
            let m = &slot.model;
            if m.model_id.is_empty() || m.model_id == "all" {
                return invalid(format!("model id `{}` is reserved or empty", m.model_id));
            }
            if !seen.insert(m.model_id.as_str()) {
                return invalid(format!("duplicate model id `{}`", m.model_id));
            }
            if m.token_budget == 0 {
                return invalid(format!("model `{}`: token_budget must be at least 1", m.model_id));
            }
            if let Some(script) = &slot.mock_script {
                if m.provider != ProviderKind::Mock {
                    return invalid(format!("model `{}`: mock_script is only valid for the mock provider", m.model_id));
                }
                MockScript::from_file(script).map_err(ConfigError::Invalid)?;
            }
        }
        if let Some(unknown) = self.prompt.overrides.keys().find(|k| !seen.contains(k.as_str())) {
            return invalid(format!("prompt override for unknown model `{unknown}`"));
        }
        if let Some(root) = &self.corpus_root {
            if !root.is_dir() {
                return invalid(format!("corpus root {} is not a directory", root.display()));
            }
        }
        if self.subscriber_buffer == 0 {
            return invalid("subscriber_buffer must be at least 1".into());
        }
        Ok(())
    }
}
