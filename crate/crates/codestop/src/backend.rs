//! Process-backed well-formedness checks and test runs.

use std::collections::BTreeMap;
use std::io;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use codestop_core::harness::{check_source, JAVA_CLASS};
use codestop_core::{
    Backend, BackendError, CheckingUnit, Diagnostic, DiagnosticCategory, Harness, Language, TestOutcome, TestStatus,
    Verdict,
};
use once_cell::sync::Lazy;
use regex::Regex;

use crate::sandbox::{filtered_env, Finished, Invocation, Scratch};
use crate::toolchain::{rebase, split_javac_errors, DiagnosticTable, RuleError, Toolchain};

/// Compiles the file named in argv[1] without executing it.
const PY_COMPILE: &str = r#"import sys
path = sys.argv[1]
with open(path, encoding="utf-8") as f:
    src = f.read()
try:
    compile(src, path, "exec", dont_inherit=True)
except SyntaxError as e:
    sys.stderr.write("%s: %s\n  line %s, column %s\n" % (type(e).__name__, e.msg, e.lineno, e.offset))
    sys.exit(1)
except ValueError as e:
    sys.stderr.write("SyntaxError: %s\n" % e)
    sys.exit(1)
"#;

/// Outermost traceback frame pointing into the harness file.
static PY_FRAME: Lazy<Regex> = Lazy::new(|| Regex::new(r#"(?m)^  File "([^"]*)", line (\d+), in (.*)$"#).unwrap());
static PY_COMPILE_ERROR: Lazy<Regex> =
    Lazy::new(|| Regex::new(r"(?m)^(SyntaxError|IndentationError|TabError)\b").unwrap());
static JAVA_MAIN_FRAME: Lazy<Regex> =
    Lazy::new(|| Regex::new(&format!(r"at {JAVA_CLASS}\.main\({JAVA_CLASS}\.java:(\d+)\)")).unwrap());

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeoutMode {
    /// One deadline for the whole harness run.
    #[default]
    Harness,
    /// Each case runs in its own process with its own deadline.
    PerCase,
}

/// Runs checks and tests as child processes of the configured toolchain.
pub struct ProcessBackend {
    toolchain: Toolchain,
    rules: DiagnosticTable,
    env: BTreeMap<String, String>,
    scratch: Scratch,
    timeout_mode: TimeoutMode,
    epoch: Instant,
}

impl ProcessBackend {
    pub fn new(toolchain: Toolchain) -> Result<Self, BackendSetupError> {
        let rules = match &toolchain.diagnostic_rules {
            Some(path) => DiagnosticTable::load(path)?,
            None => DiagnosticTable::builtin().clone(),
        };
        let scratch = Scratch::new(&toolchain.work_dir, toolchain.keep_scratch).map_err(|source| {
            BackendSetupError::Scratch {
                path: toolchain.work_dir.clone(),
                source,
            }
        })?;
        let env = filtered_env(&toolchain.env_passthrough, &toolchain.env);
        Ok(Self {
            toolchain,
            rules,
            env,
            scratch,
            timeout_mode: TimeoutMode::Harness,
            epoch: Instant::now(),
        })
    }

    pub fn with_timeout_mode(mut self, mode: TimeoutMode) -> Self {
        self.timeout_mode = mode;
        self
    }

    pub fn toolchain(&self) -> &Toolchain {
        &self.toolchain
    }

    pub fn scratch_root(&self) -> &Path {
        self.scratch.root()
    }

    fn classpath(&self, extra: &Path) -> String {
        let sep = if cfg!(windows) { ";" } else { ":" };
        std::iter::once(extra.to_path_buf())
            .chain(self.toolchain.classpath.iter().cloned())
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(sep)
    }

    fn invocation(&self, template: &[String], cwd: &Path) -> Result<Invocation, BackendError> {
        Invocation::new(template, cwd, &self.env).map_err(|e| unavailable(template, &e))
    }

    fn spawn(&self, inv: &Invocation, label: &str, deadline: Instant) -> Result<Finished, BackendError> {
        inv.run(label, deadline).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound | io::ErrorKind::PermissionDenied => unavailable(&[inv.program.clone()], &e),
            _ => BackendError::Other(format!("running {}: {e}", inv.program)),
        })
    }

    fn check_python(&mut self, unit: &CheckingUnit, preamble: &str) -> Result<Verdict, BackendError> {
        let src = check_source(unit, preamble, Language::PythonLike);
        let attempt = self.scratch.attempt().map_err(scratch_error)?;
        attempt.write(&src.file_name, &src.source).map_err(scratch_error)?;
        let inv = self
            .invocation(&self.toolchain.python_check, attempt.dir())?
            .args(["-c", PY_COMPILE, &src.file_name]);
        let done = self.spawn(&inv, "check", Instant::now() + self.toolchain.check_timeout())?;
        Ok(self.compile_verdict(&done, Language::PythonLike, src.unit_line_offset, |stderr| {
            vec![stderr.to_string()]
        }))
    }

    fn check_java(&mut self, unit: &CheckingUnit, preamble: &str) -> Result<Verdict, BackendError> {
        let src = check_source(unit, preamble, Language::JavaLike);
        let attempt = self.scratch.attempt().map_err(scratch_error)?;
        attempt.write(&src.file_name, &src.source).map_err(scratch_error)?;
        let classes = attempt.dir().join("classes");
        let inv = self
            .invocation(&self.toolchain.javac, attempt.dir())?
            .args(["-d".to_string(), classes.display().to_string()])
            .args(["-cp".to_string(), self.classpath(&classes)])
            .arg(src.file_name.clone());
        let done = self.spawn(&inv, "check", Instant::now() + self.toolchain.check_timeout())?;
        Ok(self.compile_verdict(&done, Language::JavaLike, src.unit_line_offset, split_javac_errors))
    }

    fn compile_verdict(
        &self,
        done: &Finished,
        language: Language,
        line_offset: u32,
        split: impl Fn(&str) -> Vec<String>,
    ) -> Verdict {
        if done.timed_out {
            return Verdict::Recoverable(Diagnostic::new(DiagnosticCategory::Other, "well-formedness check timed out"));
        }
        if done.success() {
            return Verdict::WellFormed;
        }
        let output = format!("{}{}", done.stderr, done.stdout);
        let records = split(&output);
        if records.iter().all(|r| r.trim().is_empty()) {
            let msg = format!("checker exited with {:?}: {}", done.exit_code(), output.trim());
            return Verdict::Recoverable(Diagnostic::new(DiagnosticCategory::Other, msg));
        }
        Verdict::from_diagnostics(
            records
                .iter()
                .filter(|r| !r.trim().is_empty())
                .map(|r| rebase(self.rules.classify(r, language), line_offset)),
        )
    }

    fn run_python(&mut self, harness: &Harness, timeout: Duration) -> Result<TestOutcome, BackendError> {
        let attempt = self.scratch.attempt().map_err(scratch_error)?;
        attempt.write(&harness.file_name, &harness.source).map_err(scratch_error)?;
        let inv = self
            .invocation(&self.toolchain.python_run, attempt.dir())?
            .arg(harness.file_name.clone());
        let done = self.spawn(&inv, "run", Instant::now() + timeout)?;
        let status = if done.timed_out {
            TestStatus::Timeout
        } else if done.success() {
            TestStatus::Passed
        } else {
            python_failure(harness, &done.stderr)
        };
        Ok(outcome(status, &done))
    }

    fn run_java(&mut self, harness: &Harness, timeout: Duration) -> Result<TestOutcome, BackendError> {
        let deadline = Instant::now() + timeout;
        let attempt = self.scratch.attempt().map_err(scratch_error)?;
        attempt.write(&harness.file_name, &harness.source).map_err(scratch_error)?;
        let classes = attempt.dir().join("classes");
        let cp = self.classpath(&classes);
        let compile = self
            .invocation(&self.toolchain.javac, attempt.dir())?
            .args(["-d".to_string(), classes.display().to_string(), "-cp".to_string(), cp.clone()])
            .arg(harness.file_name.clone());
        let done = self.spawn(&compile, "compile", deadline)?;
        if done.timed_out {
            return Ok(outcome(TestStatus::Timeout, &done));
        }
        if !done.success() {
            let msg = format!("harness does not compile:\n{}", done.stderr.trim_end());
            return Ok(outcome(TestStatus::HarnessError(msg), &done));
        }
        let compile_time = done.duration;
        let run = self
            .invocation(&self.toolchain.java_run, attempt.dir())?
            .args(["-cp".to_string(), cp, JAVA_CLASS.to_string()]);
        let mut done = self.spawn(&run, "run", deadline)?;
        done.duration += compile_time;
        let status = if done.timed_out {
            TestStatus::Timeout
        } else if done.success() {
            TestStatus::Passed
        } else {
            java_failure(harness, &done.stderr)
        };
        Ok(outcome(status, &done))
    }

    fn run_once(&mut self, harness: &Harness, timeout: Duration) -> Result<TestOutcome, BackendError> {
        match harness.language {
            Language::PythonLike => self.run_python(harness, timeout),
            Language::JavaLike => self.run_java(harness, timeout),
        }
    }
}

impl Backend for ProcessBackend {
    fn check_wellformedness(
        &mut self,
        unit: &CheckingUnit,
        preamble: &str,
        language: Language,
    ) -> Result<Verdict, BackendError> {
        match language {
            Language::PythonLike => self.check_python(unit, preamble),
            Language::JavaLike => self.check_java(unit, preamble),
        }
    }

    fn run_tests(&mut self, harness: &Harness, timeout: Duration) -> Result<TestOutcome, BackendError> {
        if self.timeout_mode == TimeoutMode::Harness || harness.cases.len() <= 1 {
            return self.run_once(harness, timeout);
        }
        let mut total = TestOutcome::new(TestStatus::Passed, Duration::ZERO, Some(0));
        for i in 0..harness.cases.len() {
            let single = harness.single_case(i).expect("case index in range");
            let mut o = self.run_once(&single, timeout)?;
            total.duration += o.duration;
            total.stdout.push_str(&o.stdout);
            total.stderr.push_str(&o.stderr);
            if !o.passed() {
                if let TestStatus::Failed { case, .. } = &mut o.status {
                    *case = case.map(|_| i);
                }
                o.duration = total.duration;
                o.stdout = total.stdout;
                o.stderr = total.stderr;
                return Ok(o);
            }
        }
        Ok(total)
    }

    fn now_ns(&self) -> u64 {
        self.epoch.elapsed().as_nanos() as u64
    }
}

fn outcome(status: TestStatus, done: &Finished) -> TestOutcome {
    let mut o = TestOutcome::new(status, done.duration, done.exit_code());
    o.stdout = done.stdout.clone();
    o.stderr = done.stderr.clone();
    o
}

fn last_line(text: &str) -> String {
    text.lines().rev().find(|l| !l.trim().is_empty()).unwrap_or("").trim().to_string()
}

fn python_failure(harness: &Harness, stderr: &str) -> TestStatus {
    if PY_COMPILE_ERROR.is_match(stderr) {
        return TestStatus::HarnessError(format!("harness does not compile: {}", last_line(stderr)));
    }
    let outermost = PY_FRAME
        .captures_iter(stderr)
        .find(|c| Path::new(&c[1]).file_name().is_some_and(|f| f == harness.file_name.as_str()));
    let case = outermost.and_then(|c| c[2].parse().ok()).and_then(|line| harness.case_at_line(line));
    match case {
        Some(i) => TestStatus::Failed {
            case: Some(i),
            message: last_line(stderr),
        },
        None => TestStatus::HarnessError(format!("harness failed outside the test cases: {}", last_line(stderr))),
    }
}

fn java_failure(harness: &Harness, stderr: &str) -> TestStatus {
    let case = JAVA_MAIN_FRAME
        .captures(stderr)
        .and_then(|c| c[1].parse().ok())
        .and_then(|line| harness.case_at_line(line));
    let headline = stderr.lines().find(|l| !l.trim().is_empty()).unwrap_or("").trim().to_string();
    match case {
        Some(i) => TestStatus::Failed {
            case: Some(i),
            message: headline,
        },
        None => TestStatus::HarnessError(format!("harness failed outside the test cases: {headline}")),
    }
}

fn unavailable(template: &[String], e: &io::Error) -> BackendError {
    BackendError::ToolchainUnavailable(format!("{}: {e}", template.first().map(String::as_str).unwrap_or("<empty>")))
}

fn scratch_error(e: io::Error) -> BackendError {
    BackendError::Other(format!("scratch directory: {e}"))
}

#[derive(Debug, thiserror::Error)]
pub enum BackendSetupError {
    #[error(transparent)]
    Rules(#[from] RuleError),
    #[error("cannot create scratch directory {path}: {source}")]
    Scratch {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
}

/// Confirms the declared dependencies are present before any run: Python
/// modules must import, Java archives must exist on the configured path.
pub fn verify_dependencies(toolchain: &Toolchain, language: Language, deps: &[String]) -> Result<(), BackendError> {
    if deps.is_empty() {
        return Ok(());
    }
    match language {
        Language::PythonLike => {
            let dir = std::env::temp_dir();
            let env = filtered_env(&toolchain.env_passthrough, &toolchain.env);
            let script = "import importlib.util, sys\nmissing = [m for m in sys.argv[1:] if importlib.util.find_spec(m) is None]\nprint(' '.join(missing))\nsys.exit(1 if missing else 0)";
            let inv = Invocation::new(&toolchain.python_run, &dir, &env)
                .map_err(|e| unavailable(&toolchain.python_run, &e))?
                .args(["-c", script])
                .args(deps.iter().cloned());
            let label = format!("codestop-deps-{}", std::process::id());
            let done = inv
                .run(&label, Instant::now() + toolchain.check_timeout())
                .map_err(|e| unavailable(&toolchain.python_run, &e))?;
            for f in ["stdout", "stderr"] {
                let _ = std::fs::remove_file(dir.join(format!("{label}.{f}.txt")));
            }
            if done.success() {
                Ok(())
            } else {
                Err(BackendError::ToolchainUnavailable(format!(
                    "missing Python modules: {}",
                    done.stdout.trim()
                )))
            }
        }
        Language::JavaLike => {
            let missing: Vec<&String> = deps
                .iter()
                .filter(|d| !toolchain.classpath.iter().any(|p| p.to_string_lossy().contains(d.as_str()) && p.exists()))
                .collect();
            if missing.is_empty() {
                Ok(())
            } else {
                Err(BackendError::ToolchainUnavailable(format!("archives not on the class path: {missing:?}")))
            }
        }
    }
}
