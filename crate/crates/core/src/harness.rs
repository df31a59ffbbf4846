//! Test-harness assembly and test outcomes.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::detect::{java, CheckingUnit};
use crate::lang::Language;

/// Name of the class that wraps JavaLike units, both for compilation checks
/// and for test runs.
pub const JAVA_CLASS: &str = "Problem";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestSuite {
    pub language: Language,
    /// Assertion source text, one per case.
    pub cases: Vec<String>,
    pub entry_point: String,
    #[serde(default)]
    pub dependencies: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TestStatus {
    Passed,
    Failed {
        /// Index of the first failing case, when the failure could be located.
        case: Option<usize>,
        message: String,
    },
    Timeout,
    HarnessError(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestOutcome {
    pub status: TestStatus,
    pub duration: Duration,
    /// Exit status of the child process; `None` when it was killed or never
    /// started.
    pub exit_code: Option<i32>,
    #[serde(default)]
    pub stdout: String,
    #[serde(default)]
    pub stderr: String,
}

impl TestOutcome {
    pub fn new(status: TestStatus, duration: Duration, exit_code: Option<i32>) -> Self {
        Self {
            status,
            duration,
            exit_code,
            stdout: String::new(),
            stderr: String::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status == TestStatus::Passed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum HarnessError {
    #[error("test suite has no cases")]
    NoCases,
    #[error("entry point `{0}` is not defined by any unit")]
    EntryPointMissing(String),
    #[error("entry point `{entry_point}` is missing and {candidates} units could stand in for it")]
    AmbiguousEntryPoint { entry_point: String, candidates: usize },
    #[error("cannot forward `{entry_point}` to `{unit}`: unparseable signature")]
    AliasSignature { entry_point: String, unit: String },
    #[error("suite language {suite} does not match harness language {harness}")]
    LanguageMismatch { suite: Language, harness: Language },
}

/// Executable test program: everything before the cases, the cases, and
/// whatever has to close after them.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Harness {
    pub language: Language,
    pub file_name: String,
    pub source: String,
    pub cases: Vec<String>,
    /// 1-based source line of each case.
    pub case_lines: Vec<u32>,
    head: String,
    case_indent: &'static str,
    tail: String,
}

impl Harness {
    fn build(
        language: Language,
        file_name: String,
        head: String,
        case_indent: &'static str,
        cases: Vec<String>,
        tail: String,
    ) -> Self {
        let first_line = head.matches('\n').count() as u32 + 1;
        let mut source = head.clone();
        let mut case_lines = Vec::with_capacity(cases.len());
        for (i, case) in cases.iter().enumerate() {
            case_lines.push(first_line + i as u32);
            source.push_str(case_indent);
            source.push_str(case);
            source.push('\n');
        }
        source.push_str(&tail);
        Harness {
            language,
            file_name,
            source,
            cases,
            case_lines,
            head,
            case_indent,
            tail,
        }
    }

    /// Same harness restricted to one case (per-case deadline mode).
    pub fn single_case(&self, index: usize) -> Option<Harness> {
        let case = self.cases.get(index)?.clone();
        Some(Harness::build(
            self.language,
            self.file_name.clone(),
            self.head.clone(),
            self.case_indent,
            alloc::vec![case],
            self.tail.clone(),
        ))
    }

    /// Index of the case on a 1-based source line.
    pub fn case_at_line(&self, line: u32) -> Option<usize> {
        self.case_lines.iter().position(|&l| l == line)
    }
}

/// Picks the units that make it into the harness: all of them for
/// PythonLike (later definitions shadow earlier ones at run time), the last
/// definition of each name for JavaLike (duplicate methods do not compile).
fn harness_units<'a>(units: &'a [CheckingUnit], language: Language) -> Vec<&'a CheckingUnit> {
    match language {
        Language::PythonLike => units.iter().collect(),
        Language::JavaLike => units
            .iter()
            .enumerate()
            .filter(|(i, u)| !units[i + 1..].iter().any(|v| v.name == u.name))
            .map(|(_, u)| u)
            .collect(),
    }
}

/// How the entry point will be reached.
enum EntryPoint<'a> {
    Direct,
    Alias(&'a CheckingUnit),
}

fn resolve_entry_point<'a>(units: &[&'a CheckingUnit], entry_point: &str) -> Result<EntryPoint<'a>, HarnessError> {
    if units.iter().any(|u| u.name == entry_point) {
        return Ok(EntryPoint::Direct);
    }
    match units {
        [] => Err(HarnessError::EntryPointMissing(entry_point.into())),
        [only] => Ok(EntryPoint::Alias(only)),
        many => Err(HarnessError::AmbiguousEntryPoint {
            entry_point: entry_point.into(),
            candidates: many.len(),
        }),
    }
}

/// Name of the unit the tests will exercise.
pub fn accepted_unit<'a>(units: &'a [CheckingUnit], entry_point: &str, language: Language) -> Option<&'a CheckingUnit> {
    let picked = harness_units(units, language);
    match resolve_entry_point(&picked, entry_point).ok()? {
        EntryPoint::Direct => picked.into_iter().rev().find(|u| u.name == entry_point),
        EntryPoint::Alias(u) => Some(u),
    }
}

fn java_imports(preamble: &str) -> String {
    let mut out = String::new();
    for line in preamble.lines().filter(|l| l.trim_start().starts_with("import ")) {
        out.push_str(line.trim());
        out.push('\n');
    }
    out
}

fn push_unit(out: &mut String, unit: &CheckingUnit) {
    out.push_str(&unit.canonical_text);
    if !unit.canonical_text.ends_with('\n') {
        out.push('\n');
    }
}

fn java_alias(unit: &CheckingUnit, entry_point: &str) -> Result<String, HarnessError> {
    let parts = java::signature_parts(&unit.signature_text).ok_or_else(|| HarnessError::AliasSignature {
        entry_point: entry_point.into(),
        unit: unit.name.clone(),
    })?;
    let is_static = java::lex(&unit.signature_text)
        .iter()
        .any(|t| &unit.signature_text[t.start..t.end] == "static");
    let params: Vec<String> = parts.params.iter().map(|(ty, name)| format!("{ty} {name}")).collect();
    let args: Vec<&str> = parts.params.iter().map(|(_, name)| name.as_str()).collect();
    let receiver = if is_static {
        String::from(JAVA_CLASS)
    } else {
        format!("new {JAVA_CLASS}()")
    };
    let ret = if parts.return_type == "void" { "" } else { "return " };
    let type_params = if parts.type_params.is_empty() {
        String::new()
    } else {
        format!("{} ", parts.type_params)
    };
    Ok(format!(
        "    public static {type_params}{} {entry_point}({}) {{\n        {ret}{receiver}.{}({});\n    }}\n\n",
        parts.return_type,
        params.join(", "),
        unit.name,
        args.join(", "),
    ))
}

/// Assembles the test program from the viable units of the current context.
///
/// PythonLike: preamble, the units in textual order, then one assertion per
/// line. JavaLike: imports, then `class Problem` holding the units and a
/// `main` that runs the assertions (run with assertions enabled).
pub fn assemble_harness(
    units: &[CheckingUnit],
    preamble: &str,
    suite: &TestSuite,
    language: Language,
) -> Result<Harness, HarnessError> {
    if suite.language != language {
        return Err(HarnessError::LanguageMismatch {
            suite: suite.language,
            harness: language,
        });
    }
    if suite.cases.is_empty() {
        return Err(HarnessError::NoCases);
    }
    let picked = harness_units(units, language);
    let entry = resolve_entry_point(&picked, &suite.entry_point)?;

    match language {
        Language::PythonLike => {
            let mut head = String::new();
            if !preamble.trim().is_empty() {
                head.push_str(preamble.trim_end());
                head.push('\n');
            }
            for unit in &picked {
                push_unit(&mut head, unit);
            }
            if let EntryPoint::Alias(unit) = entry {
                head.push_str(&format!("{} = {}\n", suite.entry_point, unit.name));
            }
            let cases = suite.cases.iter().map(|c| String::from(c.trim())).collect();
            Ok(Harness::build(language, "harness.py".into(), head, "", cases, String::new()))
        }
        Language::JavaLike => {
            let mut head = java_imports(preamble);
            if !head.is_empty() {
                head.push('\n');
            }
            head.push_str(&format!("class {JAVA_CLASS} {{\n"));
            for unit in &picked {
                push_unit(&mut head, unit);
                head.push('\n');
            }
            if let EntryPoint::Alias(unit) = entry {
                head.push_str(&java_alias(unit, &suite.entry_point)?);
            }
            head.push_str("    public static void main(String[] args) {\n");
            let cases = suite
                .cases
                .iter()
                .map(|c| {
                    let c = c.trim();
                    if c.ends_with(';') {
                        String::from(c)
                    } else {
                        format!("{c};")
                    }
                })
                .collect();
            Ok(Harness::build(
                language,
                format!("{JAVA_CLASS}.java"),
                head,
                "        ",
                cases,
                String::from("    }\n}\n"),
            ))
        }
    }
}

/// Source submitted to the well-formedness checker for one unit.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CheckSource {
    pub file_name: String,
    pub source: String,
    /// Number of source lines before the unit's first line.
    pub unit_line_offset: u32,
}

/// PythonLike: preamble followed by the unit. JavaLike: the unit inside the
/// same `class Problem` shell the harness uses, with an empty `main`.
pub fn check_source(unit: &CheckingUnit, preamble: &str, language: Language) -> CheckSource {
    match language {
        Language::PythonLike => {
            let mut source = String::new();
            if !preamble.trim().is_empty() {
                source.push_str(preamble.trim_end());
                source.push('\n');
            }
            let unit_line_offset = source.matches('\n').count() as u32;
            push_unit(&mut source, unit);
            CheckSource {
                file_name: "unit.py".into(),
                source,
                unit_line_offset,
            }
        }
        Language::JavaLike => {
            let mut source = java_imports(preamble);
            if !source.is_empty() {
                source.push('\n');
            }
            source.push_str(&format!("class {JAVA_CLASS} {{\n"));
            let unit_line_offset = source.matches('\n').count() as u32;
            push_unit(&mut source, unit);
            source.push_str("\n    public static void main(String[] args) {\n    }\n}\n");
            CheckSource {
                file_name: format!("{JAVA_CLASS}.java"),
                source,
                unit_line_offset,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::detect_complete_units;
    use alloc::vec;

    fn suite(lang: Language, entry: &str, cases: &[&str]) -> TestSuite {
        TestSuite {
            language: lang,
            cases: cases.iter().map(|c| String::from(*c)).collect(),
            entry_point: entry.into(),
            dependencies: vec![],
        }
    }

    fn units(text: &str, lang: Language) -> Vec<CheckingUnit> {
        let d = detect_complete_units(text, lang);
        let mut out = d.complete;
        if let Some(open) = d.in_progress {
            out.push(open.provisional(text, lang));
        }
        out
    }

    #[test]
    fn python_square_harness_is_exact() {
        let us = units("def square(x):\n    return x * x\n", Language::PythonLike);
        let h = assemble_harness(&us, "", &suite(Language::PythonLike, "square", &["assert square(3) == 9"]), Language::PythonLike)
            .unwrap();
        assert_eq!(h.source, "def square(x):\n    return x * x\nassert square(3) == 9\n");
        assert_eq!(h.case_lines, vec![3]);
        assert_eq!(h.file_name, "harness.py");
    }

    #[test]
    fn python_preamble_and_helper_order() {
        let text = "def f(x):\n    return g(x) + 1\n\ndef g(x):\n    return math.floor(x)\n";
        let us = units(text, Language::PythonLike);
        let h = assemble_harness(
            &us,
            "import math",
            &suite(Language::PythonLike, "f", &["assert f(1.5) == 2", "assert f(0) == 1"]),
            Language::PythonLike,
        )
        .unwrap();
        assert_eq!(
            h.source,
            "import math\ndef f(x):\n    return g(x) + 1\ndef g(x):\n    return math.floor(x)\nassert f(1.5) == 2\nassert f(0) == 1\n"
        );
        assert_eq!(h.case_lines, vec![6, 7]);
        assert_eq!(h.case_at_line(7), Some(1));
        let single = h.single_case(1).unwrap();
        assert!(single.source.ends_with("    return math.floor(x)\nassert f(0) == 1\n"));
        assert_eq!(single.case_lines, vec![6]);
    }

    #[test]
    fn java_problem_class() {
        let us = units("public static int inc(int x){return x+1;}", Language::JavaLike);
        let h = assemble_harness(&us, "", &suite(Language::JavaLike, "inc", &["assert Problem.inc(1) == 2;"]), Language::JavaLike)
            .unwrap();
        assert_eq!(
            h.source,
            "class Problem {\npublic static int inc(int x){return x+1;}\n\n    public static void main(String[] args) {\n        assert Problem.inc(1) == 2;\n    }\n}\n"
        );
        assert_eq!(h.file_name, "Problem.java");
        assert_eq!(h.case_lines, vec![5]);
    }

    #[test]
    fn java_imports_only_and_duplicate_methods() {
        let text = "public static int f(int x) { return 0; }\npublic static int f(int x) { return x; }\n";
        let us = units(text, Language::JavaLike);
        assert_eq!(us.len(), 2);
        let h = assemble_harness(
            &us,
            "package p;\nimport java.util.*;",
            &suite(Language::JavaLike, "f", &["assert Problem.f(2) == 2"]),
            Language::JavaLike,
        )
        .unwrap();
        assert!(h.source.starts_with("import java.util.*;\n\nclass Problem {\npublic static int f(int x) { return x; }\n"));
        assert!(!h.source.contains("return 0"));
        assert!(h.source.contains("assert Problem.f(2) == 2;\n"));
    }

    #[test]
    fn entry_point_aliasing() {
        let us = units("def sq(x):\n    return x * x\n", Language::PythonLike);
        let h = assemble_harness(&us, "", &suite(Language::PythonLike, "square", &["assert square(2) == 4"]), Language::PythonLike)
            .unwrap();
        assert!(h.source.contains("square = sq\n"));
        assert_eq!(accepted_unit(&us, "square", Language::PythonLike).unwrap().name, "sq");

        let us = units("def a(x):\n    return x\ndef b(x):\n    return x\n", Language::PythonLike);
        let err = assemble_harness(&us, "", &suite(Language::PythonLike, "square", &["assert square(2) == 4"]), Language::PythonLike)
            .unwrap_err();
        assert_eq!(err, HarnessError::AmbiguousEntryPoint { entry_point: "square".into(), candidates: 2 });

        let err = assemble_harness(&[], "", &suite(Language::PythonLike, "square", &["assert square(2) == 4"]), Language::PythonLike)
            .unwrap_err();
        assert_eq!(err, HarnessError::EntryPointMissing("square".into()));
    }

    #[test]
    fn java_alias_forwards_arguments() {
        let us = units("public int addTwo(int a, int b) { return a + b; }", Language::JavaLike);
        let h = assemble_harness(&us, "", &suite(Language::JavaLike, "add", &["assert Problem.add(1, 2) == 3"]), Language::JavaLike)
            .unwrap();
        assert!(h.source.contains(
            "    public static int add(int a, int b) {\n        return new Problem().addTwo(a, b);\n    }\n"
        ));
    }

    #[test]
    fn check_sources() {
        let us = units("def square(x):\n", Language::PythonLike);
        let cs = check_source(&us[0], "import math", Language::PythonLike);
        assert_eq!(cs.source, "import math\ndef square(x):\n");
        assert_eq!(cs.unit_line_offset, 1);
        let us = units("int f() { return \"a\"; }", Language::JavaLike);
        let cs = check_source(&us[0], "import java.util.*;", Language::JavaLike);
        assert_eq!(
            cs.source,
            "import java.util.*;\n\nclass Problem {\nint f() { return \"a\"; }\n\n    public static void main(String[] args) {\n    }\n}\n"
        );
        assert_eq!(cs.unit_line_offset, 3);
    }

    #[test]
    fn empty_suite_and_language_mismatch() {
        let us = units("def f(x):\n    return x\n", Language::PythonLike);
        assert_eq!(
            assemble_harness(&us, "", &suite(Language::PythonLike, "f", &[]), Language::PythonLike).unwrap_err(),
            HarnessError::NoCases
        );
        assert!(matches!(
            assemble_harness(&us, "", &suite(Language::JavaLike, "f", &["x"]), Language::PythonLike),
            Err(HarnessError::LanguageMismatch { .. })
        ));
    }
}
