//! Toolchain configuration and classification of compiler diagnostics.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use codestop_core::{Diagnostic, DiagnosticCategory, Language};
use once_cell::sync::Lazy;
use regex::Regex;
use serde::{Deserialize, Serialize};

/// Commands and environment for the object-language checkers and runners.
/// Each command is a program followed by leading arguments; file arguments
/// are appended per invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Toolchain {
    pub python_check: Vec<String>,
    pub python_run: Vec<String>,
    pub javac: Vec<String>,
    pub java_run: Vec<String>,
    /// Archives placed on the compile and run class path.
    pub classpath: Vec<PathBuf>,
    /// Root of the per-session scratch directories.
    pub work_dir: PathBuf,
    pub check_timeout_secs: f64,
    /// Variables inherited from the parent environment; all others are dropped.
    pub env_passthrough: Vec<String>,
    pub env: BTreeMap<String, String>,
    /// Replaces the built-in diagnostic rule table.
    pub diagnostic_rules: Option<PathBuf>,
    pub keep_scratch: bool,
}

impl Default for Toolchain {
    fn default() -> Self {
        let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
        Self {
            python_check: s(&["python3", "-S", "-E"]),
            python_run: s(&["python3", "-I"]),
            javac: s(&["javac", "-proc:none", "-encoding", "UTF-8", "-nowarn"]),
            java_run: s(&["java", "-ea"]),
            classpath: Vec::new(),
            work_dir: std::env::temp_dir().join("codestop-work"),
            check_timeout_secs: 10.0,
            env_passthrough: s(&["PATH", "HOME", "LANG", "LC_ALL", "JAVA_HOME", "TMPDIR", "SYSTEMROOT"]),
            env: BTreeMap::new(),
            diagnostic_rules: None,
            keep_scratch: false,
        }
    }
}

impl Toolchain {
    pub fn check_timeout(&self) -> Duration {
        Duration::from_secs_f64(self.check_timeout_secs.max(0.001))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RuleError {
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("cannot read rule file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone)]
struct Rule {
    language: Language,
    pattern: Regex,
    category: DiagnosticCategory,
}

/// Ordered pattern table mapping diagnostic text to a category.
#[derive(Debug, Clone)]
pub struct DiagnosticTable {
    rules: Vec<Rule>,
}

const DEFAULT_RULES: &str = include_str!("../rules/diagnostics.rules");

static DEFAULT_TABLE: Lazy<DiagnosticTable> =
    Lazy::new(|| DiagnosticTable::parse(DEFAULT_RULES, "<builtin>").expect("built-in rules parse"));

impl DiagnosticTable {
    pub fn builtin() -> &'static DiagnosticTable {
        &DEFAULT_TABLE
    }

    pub fn load(path: &Path) -> Result<Self, RuleError> {
        let text = std::fs::read_to_string(path).map_err(|source| RuleError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::parse(&text, &path.display().to_string())
    }

    /// Parses `<language> <regex> <category>` lines; the regex is everything
    /// between the first and last whitespace-separated fields.
    pub fn parse(text: &str, origin: &str) -> Result<Self, RuleError> {
        let mut rules = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: String| RuleError::Parse {
                path: origin.to_string(),
                line: n + 1,
                message,
            };
            let (lang, rest) = line.split_once(char::is_whitespace).ok_or_else(|| err("missing fields".into()))?;
            let (pattern, category) = rest
                .trim()
                .rsplit_once(char::is_whitespace)
                .ok_or_else(|| err("missing regex or category".into()))?;
            let language = Language::from_str(lang).map_err(|e| err(e.to_string()))?;
            let category =
                DiagnosticCategory::from_str(category).map_err(|c| err(format!("unknown category `{c}`")))?;
            let pattern = Regex::new(pattern.trim()).map_err(|e| err(e.to_string()))?;
            rules.push(Rule {
                language,
                pattern,
                category,
            });
        }
        Ok(Self { rules })
    }

    pub fn category(&self, message: &str, language: Language) -> DiagnosticCategory {
        self.rules
            .iter()
            .find(|r| r.language == language && r.pattern.is_match(message))
            .map(|r| r.category)
            .unwrap_or(DiagnosticCategory::Other)
    }

    /// Classifies one diagnostic record. Only the headline (first line) is
    /// matched; the full record is kept as the raw message.
    pub fn classify(&self, raw: &str, language: Language) -> Diagnostic {
        let headline = raw.lines().next().unwrap_or("");
        let message = JAVAC_RECORD
            .captures(headline)
            .and_then(|c| c.get(3))
            .map(|m| m.as_str())
            .unwrap_or(headline);
        let mut diagnostic = Diagnostic::new(self.category(message, language), raw.trim_end());
        if let Some(c) = JAVAC_RECORD.captures(headline) {
            diagnostic.location = c[2].parse().ok().map(|l| (l, 0));
        } else if let Some(c) = PY_LOCATION.captures(raw) {
            let line = c[1].parse().unwrap_or(0);
            let col = c.get(2).and_then(|m| m.as_str().parse().ok()).unwrap_or(0);
            diagnostic.location = Some((line, col));
        }
        diagnostic
    }
}

/// Classifies with the built-in table.
pub fn classify_diagnostic(raw: &str, language: Language) -> Diagnostic {
    DiagnosticTable::builtin().classify(raw, language)
}

static JAVAC_RECORD: Lazy<Regex> = Lazy::new(|| Regex::new(r"^(.*\.java):(\d+): error: (.*)$").unwrap());
static PY_LOCATION: Lazy<Regex> = Lazy::new(|| Regex::new(r"(?m)^\s*line (\d+), column (\d+|None)$").unwrap());

/// Splits javac output into one record per `error:` headline, each with its
/// continuation lines (source excerpt, caret, symbol and location notes).
pub fn split_javac_errors(stderr: &str) -> Vec<String> {
    let mut records: Vec<String> = Vec::new();
    let mut current: Option<String> = None;
    for line in stderr.lines() {
        if JAVAC_RECORD.is_match(line) {
            if let Some(r) = current.take() {
                records.push(r);
            }
            current = Some(format!("{line}\n"));
        } else if line.contains(".java:") && line.contains(": warning:") || is_error_count(line) {
            if let Some(r) = current.take() {
                records.push(r);
            }
        } else if let Some(r) = current.as_mut() {
            r.push_str(line);
            r.push('\n');
        }
    }
    records.extend(current);
    records
}

fn is_error_count(line: &str) -> bool {
    let t = line.trim();
    t.ends_with(" error") || t.ends_with(" errors") || t.ends_with(" warning") || t.ends_with(" warnings")
}

/// Rebases a diagnostic's line onto the checked unit.
pub fn rebase(mut diagnostic: Diagnostic, line_offset: u32) -> Diagnostic {
    if let Some((line, col)) = diagnostic.location {
        diagnostic.location = Some((line.saturating_sub(line_offset), col));
    }
    diagnostic
}
