use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};

/// Object language of the generated code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Language {
    /// Indentation-delimited functions introduced by `def`.
    #[serde(rename = "python")]
    PythonLike,
    /// Brace-delimited methods with an explicit return type.
    #[serde(rename = "java")]
    JavaLike,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::PythonLike => "python",
            Language::JavaLike => "java",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown language `{0}` (expected `python` or `java`)")]
pub struct UnknownLanguage(pub alloc::string::String);

impl FromStr for Language {
    type Err = UnknownLanguage;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "python" | "py" | "pythonlike" => Ok(Language::PythonLike),
            "java" | "javalike" => Ok(Language::JavaLike),
            other => Err(UnknownLanguage(other.into())),
        }
    }
}
