use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::lang::Language;

/// When the checking pipeline runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerPolicy {
    EveryToken,
    EndOfLine,
    /// Fires when the token text contains any of the listed strings.
    DelimiterSet(Vec<String>),
}

impl TriggerPolicy {
    pub fn default_for(language: Language) -> Self {
        match language {
            Language::PythonLike => TriggerPolicy::EndOfLine,
            Language::JavaLike => TriggerPolicy::DelimiterSet(vec!["}".into(), "\n".into()]),
        }
    }

    /// Whether a token with this text fires the pipeline. End-of-generation
    /// always fires regardless of policy; that is handled by the session.
    pub fn fires(&self, text: &str) -> bool {
        match self {
            TriggerPolicy::EveryToken => true,
            TriggerPolicy::EndOfLine => text.contains('\n'),
            TriggerPolicy::DelimiterSet(delims) => {
                delims.iter().any(|d| !d.is_empty() && text.contains(d.as_str()))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("max_output_tokens must be at least 1")]
    ZeroTokenCap,
    #[error("test_timeout must be positive")]
    ZeroTimeout,
}

/// Toolchain-independent part of the suppression configuration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub language: Language,
    pub trigger_policy: TriggerPolicy,
    pub max_output_tokens: usize,
    pub test_timeout: Duration,
}

pub const DEFAULT_MAX_OUTPUT_TOKENS: usize = 1000;
pub const DEFAULT_TEST_TIMEOUT: Duration = Duration::from_secs(10);

impl SessionConfig {
    pub fn new(language: Language) -> Self {
        Self {
            language,
            trigger_policy: TriggerPolicy::default_for(language),
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
            test_timeout: DEFAULT_TEST_TIMEOUT,
        }
    }

    pub fn with_trigger(mut self, policy: TriggerPolicy) -> Self {
        self.trigger_policy = policy;
        self
    }

    pub fn with_max_output_tokens(mut self, cap: usize) -> Self {
        self.max_output_tokens = cap;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_output_tokens == 0 {
            return Err(ConfigError::ZeroTokenCap);
        }
        if self.test_timeout.is_zero() {
            return Err(ConfigError::ZeroTimeout);
        }
        Ok(())
    }
}
