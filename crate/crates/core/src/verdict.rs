//! Well-formedness verdicts and the session's discard set.

use alloc::collections::BTreeSet;
use alloc::string::String;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum DiagnosticCategory {
    SyntaxError,
    TypeError,
    UnresolvedIdentifier,
    Other,
}

impl DiagnosticCategory {
    /// Errors that further generation cannot repair.
    pub fn is_fatal(self) -> bool {
        matches!(self, DiagnosticCategory::SyntaxError | DiagnosticCategory::TypeError)
    }
}

impl core::str::FromStr for DiagnosticCategory {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "SyntaxError" => Ok(Self::SyntaxError),
            "TypeError" => Ok(Self::TypeError),
            "UnresolvedIdentifier" => Ok(Self::UnresolvedIdentifier),
            "Other" => Ok(Self::Other),
            other => Err(other.into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub category: DiagnosticCategory,
    pub raw_message: String,
    /// 1-based line and column relative to the checked unit, when known.
    pub location: Option<(u32, u32)>,
}

impl Diagnostic {
    pub fn new(category: DiagnosticCategory, raw_message: impl Into<String>) -> Self {
        Self {
            category,
            raw_message: raw_message.into(),
            location: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    WellFormed,
    FatalMalformed(Diagnostic),
    Recoverable(Diagnostic),
}

impl Verdict {
    /// Builds a verdict from every diagnostic of one check: any fatal
    /// diagnostic dominates, otherwise the first recoverable one is kept.
    pub fn from_diagnostics<I: IntoIterator<Item = Diagnostic>>(diagnostics: I) -> Verdict {
        let mut recoverable = None;
        for d in diagnostics {
            if d.category.is_fatal() {
                return Verdict::FatalMalformed(d);
            }
            recoverable.get_or_insert(d);
        }
        match recoverable {
            Some(d) => Verdict::Recoverable(d),
            None => Verdict::WellFormed,
        }
    }

    pub fn diagnostic(&self) -> Option<&Diagnostic> {
        match self {
            Verdict::WellFormed => None,
            Verdict::FatalMalformed(d) | Verdict::Recoverable(d) => Some(d),
        }
    }
}

pub fn should_discard(verdict: &Verdict) -> bool {
    matches!(verdict, Verdict::FatalMalformed(_))
}

/// Canonical texts of permanently rejected units.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DiscardSet {
    units: BTreeSet<String>,
    hits: u64,
}

impl DiscardSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, canonical_text: &str) {
        self.units.insert(canonical_text.into());
    }

    /// Membership test that counts a hit when the unit is present.
    pub fn check(&mut self, canonical_text: &str) -> bool {
        let present = self.units.contains(canonical_text);
        if present {
            self.hits += 1;
        }
        present
    }

    pub fn contains(&self, canonical_text: &str) -> bool {
        self.units.contains(canonical_text)
    }

    pub fn hits(&self) -> u64 {
        self.hits
    }

    pub fn len(&self) -> usize {
        self.units.len()
    }

    pub fn is_empty(&self) -> bool {
        self.units.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.units.iter().map(String::as_str)
    }
}
