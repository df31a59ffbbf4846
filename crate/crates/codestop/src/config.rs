//! Suppression configuration file (TOML).

use std::path::Path;
use std::time::Duration;

use codestop_core::config::{DEFAULT_MAX_OUTPUT_TOKENS, DEFAULT_TEST_TIMEOUT};
use codestop_core::{Language, SessionConfig, TriggerPolicy};
use serde::{Deserialize, Serialize};

use crate::backend::TimeoutMode;
use crate::toolchain::Toolchain;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TriggerKind {
    /// Every token.
    Token,
    /// Tokens containing a newline.
    Line,
    /// Tokens containing one of the configured delimiters.
    Delims,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuppressionConfig {
    pub max_output_tokens: usize,
    pub test_timeout_secs: f64,
    /// Unset: EndOfLine for Python, delimiters `}` and newline for Java.
    pub trigger: Option<TriggerKind>,
    pub delimiters: Vec<String>,
    /// Apply the test timeout to each case separately.
    pub per_case_timeout: bool,
    pub workers: usize,
    /// Libraries that must be installed before any run.
    pub dependencies: Vec<String>,
    pub toolchain: Toolchain,
}

impl Default for SuppressionConfig {
    fn default() -> Self {
        Self {
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            test_timeout_secs: DEFAULT_TEST_TIMEOUT.as_secs_f64(),
            trigger: None,
            delimiters: vec!["}".into(), "\n".into()],
            per_case_timeout: false,
            workers: 1,
            dependencies: Vec::new(),
            toolchain: Toolchain::default(),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigFileError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: toml::de::Error,
    },
    #[error("{0}")]
    Invalid(String),
}

impl SuppressionConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigFileError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigFileError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config: Self = toml::from_str(&text).map_err(|source| ConfigFileError::Parse {
            path: path.display().to_string(),
            source,
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigFileError> {
        if self.max_output_tokens == 0 {
            return Err(ConfigFileError::Invalid("max_output_tokens must be at least 1".into()));
        }
        if !(self.test_timeout_secs > 0.0 && self.test_timeout_secs.is_finite()) {
            return Err(ConfigFileError::Invalid("test_timeout_secs must be positive".into()));
        }
        if self.trigger == Some(TriggerKind::Delims) && self.delimiters.iter().all(String::is_empty) {
            return Err(ConfigFileError::Invalid("trigger = \"delims\" needs non-empty delimiters".into()));
        }
        Ok(())
    }

    pub fn test_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.test_timeout_secs)
    }

    pub fn timeout_mode(&self) -> TimeoutMode {
        if self.per_case_timeout {
            TimeoutMode::PerCase
        } else {
            TimeoutMode::Harness
        }
    }

    pub fn trigger_policy(&self, language: Language) -> TriggerPolicy {
        match self.trigger {
            None => TriggerPolicy::default_for(language),
            Some(TriggerKind::Token) => TriggerPolicy::EveryToken,
            Some(TriggerKind::Line) => TriggerPolicy::EndOfLine,
            Some(TriggerKind::Delims) => TriggerPolicy::DelimiterSet(self.delimiters.clone()),
        }
    }

    pub fn session_config(&self, language: Language) -> SessionConfig {
        let mut c = SessionConfig::new(language)
            .with_trigger(self.trigger_policy(language))
            .with_max_output_tokens(self.max_output_tokens);
        c.test_timeout = self.test_timeout();
        c
    }
}
