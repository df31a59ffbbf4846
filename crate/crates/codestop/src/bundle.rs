//! Problem bundles: prompt, entry point and test cases for one problem.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context};
use codestop_core::{Language, TestSuite};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProblemBundle {
    pub id: String,
    pub language: Language,
    #[serde(default = "default_benchmark")]
    pub benchmark: String,
    /// Problem description and function signature.
    pub prompt: String,
    pub entry_point: String,
    /// One assertion per case.
    pub tests: Vec<String>,
    #[serde(default)]
    pub dependencies: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub canonical_solution: Option<String>,
}

fn default_benchmark() -> String {
    "custom".into()
}

impl ProblemBundle {
    pub fn validate(&self) -> anyhow::Result<()> {
        if self.tests.is_empty() {
            bail!("{}: no test cases", self.id);
        }
        if self.entry_point.is_empty() || !self.prompt.contains(&self.entry_point) {
            bail!("{}: entry point `{}` does not appear in the prompt", self.id, self.entry_point);
        }
        Ok(())
    }

    pub fn suite(&self) -> TestSuite {
        TestSuite {
            language: self.language,
            cases: self.tests.clone(),
            entry_point: self.entry_point.clone(),
            dependencies: self.dependencies.clone(),
        }
    }

    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let bundle: Self = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        bundle.validate()?;
        Ok(bundle)
    }
}

/// Every `*.json` bundle in a directory, keyed by problem id.
pub fn load_corpus(dir: &Path) -> anyhow::Result<BTreeMap<String, ProblemBundle>> {
    let mut corpus = BTreeMap::new();
    let entries = std::fs::read_dir(dir).with_context(|| format!("reading corpus {}", dir.display()))?;
    let mut paths: Vec<_> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for path in paths {
        let bundle = ProblemBundle::load(&path)?;
        if let Some(prev) = corpus.insert(bundle.id.clone(), bundle) {
            bail!("duplicate problem id {} ({})", prev.id, path.display());
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_validates() {
        let b: ProblemBundle = serde_json::from_str(
            r#"{"id":"sq","language":"python","prompt":"def square(x):\n    \"\"\"Square.\"\"\"\n",
                "entry_point":"square","tests":["assert square(3) == 9"]}"#,
        )
        .unwrap();
        b.validate().unwrap();
        assert_eq!(b.benchmark, "custom");
        assert_eq!(b.suite().cases, vec!["assert square(3) == 9"]);
        let mut bad = b.clone();
        bad.entry_point = "cube".into();
        assert!(bad.validate().is_err());
        let mut empty = b;
        empty.tests.clear();
        assert!(empty.validate().is_err());
    }
}
