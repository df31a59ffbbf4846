//! One generation session: consumes token events, runs the checking pipeline
//! at trigger points and decides when to stop.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::time::Duration;

use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, SessionConfig};
use crate::detect::{detect_complete_units, extract_preamble, strip_fences, CheckingUnit, StrippedText};
use crate::harness::{accepted_unit, assemble_harness, Harness, HarnessError, TestOutcome, TestSuite};
use crate::lang::Language;
use crate::token::TokenEvent;
use crate::verdict::{should_discard, DiagnosticCategory, DiscardSet, Verdict};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("toolchain unavailable: {0}")]
    ToolchainUnavailable(String),
    #[error("backend failure: {0}")]
    Other(String),
}

/// Toolchain access and a monotonic clock.
pub trait Backend {
    fn check_wellformedness(
        &mut self,
        unit: &CheckingUnit,
        preamble: &str,
        language: Language,
    ) -> Result<Verdict, BackendError>;

    fn run_tests(&mut self, harness: &Harness, timeout: Duration) -> Result<TestOutcome, BackendError>;

    /// Monotonic time in nanoseconds.
    fn now_ns(&self) -> u64;
}

impl<B: Backend + ?Sized> Backend for &mut B {
    fn check_wellformedness(
        &mut self,
        unit: &CheckingUnit,
        preamble: &str,
        language: Language,
    ) -> Result<Verdict, BackendError> {
        (**self).check_wellformedness(unit, preamble, language)
    }

    fn run_tests(&mut self, harness: &Harness, timeout: Duration) -> Result<TestOutcome, BackendError> {
        (**self).run_tests(harness, timeout)
    }

    fn now_ns(&self) -> u64 {
        (**self).now_ns()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SessionState {
    Running,
    StoppedAccepted,
    StoppedEos,
    StoppedExhausted,
    /// The toolchain failed; not a generation outcome.
    Aborted,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        self != SessionState::Running
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    pub triggers: u64,
    pub wellformedness_checks: u64,
    pub test_executions: u64,
    pub discard_hits: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopDecision {
    Continue,
    StopAccepted { accepted_unit: CheckingUnit, stop_index: usize },
    StopEos,
    StopExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SessionError {
    #[error("expected token index {expected}, got {got}")]
    IndexMismatch { expected: usize, got: usize },
    #[error("end-of-generation event carries text")]
    EosWithText,
    #[error("session is no longer running ({0:?})")]
    NotRunning(SessionState),
    #[error("invalid configuration: {0}")]
    InvalidConfig(#[from] ConfigError),
    #[error("configuration error: {0}")]
    Backend(#[from] BackendError),
}

/// Where and how a session was accepted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Acceptance {
    pub unit: CheckingUnit,
    pub stop_index: usize,
    /// Byte span of the accepted unit in the raw accumulated text.
    pub raw_span: (usize, usize),
    /// Inclusive token-index span covered by the accepted unit.
    pub token_span: (usize, usize),
    pub harness_source: String,
}

/// Units the pipeline looks at: every complete unit plus, for PythonLike,
/// the unit still open at the end of the text. A Python function is only
/// closed by the next unindented line, so the last one would otherwise never
/// be checked before more text arrives.
pub fn candidate_units(stripped: &str, language: Language) -> Vec<CheckingUnit> {
    let detection = detect_complete_units(stripped, language);
    let mut units = detection.complete;
    if language == Language::PythonLike {
        if let Some(open) = detection.in_progress {
            units.push(open.provisional(stripped, language));
        }
    }
    units
}

fn viable(verdict: &Verdict) -> bool {
    match verdict {
        Verdict::WellFormed => true,
        Verdict::Recoverable(d) => d.category == DiagnosticCategory::UnresolvedIdentifier,
        Verdict::FatalMalformed(_) => false,
    }
}

pub struct Session {
    problem_id: String,
    config: SessionConfig,
    suite: TestSuite,
    text: String,
    /// Byte offset just past each consumed token.
    token_ends: Vec<usize>,
    discard: DiscardSet,
    verdicts: BTreeMap<(String, String), Verdict>,
    outcomes: BTreeMap<String, TestOutcome>,
    state: SessionState,
    counters: Counters,
    bs_time_ns: u64,
    pipeline_latencies_ns: Vec<u64>,
    acceptance: Option<Acceptance>,
}

impl Session {
    pub fn new(problem_id: impl Into<String>, suite: TestSuite, config: SessionConfig) -> Result<Self, SessionError> {
        config.validate()?;
        Ok(Self {
            problem_id: problem_id.into(),
            config,
            suite,
            text: String::new(),
            token_ends: Vec::new(),
            discard: DiscardSet::new(),
            verdicts: BTreeMap::new(),
            outcomes: BTreeMap::new(),
            state: SessionState::Running,
            counters: Counters::default(),
            bs_time_ns: 0,
            pipeline_latencies_ns: Vec::new(),
            acceptance: None,
        })
    }

    pub fn problem_id(&self) -> &str {
        &self.problem_id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn accumulated_text(&self) -> &str {
        &self.text
    }

    pub fn token_count(&self) -> usize {
        self.token_ends.len()
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn counters(&self) -> Counters {
        Counters {
            discard_hits: self.discard.hits(),
            ..self.counters
        }
    }

    pub fn discard_set(&self) -> &DiscardSet {
        &self.discard
    }

    pub fn bs_time(&self) -> Duration {
        Duration::from_nanos(self.bs_time_ns)
    }

    /// Wall time of every pipeline run, in trigger order.
    pub fn pipeline_latencies(&self) -> &[u64] {
        &self.pipeline_latencies_ns
    }

    pub fn acceptance(&self) -> Option<&Acceptance> {
        self.acceptance.as_ref()
    }

    /// Feeds one event. Errors leave the session unusable only for
    /// toolchain failures; protocol errors are rejected without side effects.
    pub fn on_token<B: Backend + ?Sized>(
        &mut self,
        event: &TokenEvent,
        backend: &mut B,
    ) -> Result<StopDecision, SessionError> {
        if self.state.is_terminal() {
            return Err(SessionError::NotRunning(self.state));
        }
        if event.index != self.token_count() {
            return Err(SessionError::IndexMismatch {
                expected: self.token_count(),
                got: event.index,
            });
        }
        if event.is_eos {
            if !event.text.is_empty() {
                return Err(SessionError::EosWithText);
            }
            if let Some(decision) = self.trigger(backend)? {
                return Ok(decision);
            }
            self.state = SessionState::StoppedEos;
            return Ok(StopDecision::StopEos);
        }

        self.text.push_str(&event.text);
        self.token_ends.push(self.text.len());
        if self.config.trigger_policy.fires(&event.text) {
            if let Some(decision) = self.trigger(backend)? {
                return Ok(decision);
            }
        }
        if self.token_count() >= self.config.max_output_tokens {
            self.state = SessionState::StoppedExhausted;
            return Ok(StopDecision::StopExhausted);
        }
        Ok(StopDecision::Continue)
    }

    /// Runs the pipeline once, e.g. when a source ends without an
    /// end-of-generation marker. Returns whether the session was accepted.
    pub fn finish<B: Backend + ?Sized>(&mut self, backend: &mut B) -> Result<Option<StopDecision>, SessionError> {
        if self.state.is_terminal() {
            return Err(SessionError::NotRunning(self.state));
        }
        let decision = self.trigger(backend)?;
        if decision.is_none() {
            self.state = SessionState::StoppedExhausted;
        }
        Ok(decision)
    }

    fn trigger<B: Backend + ?Sized>(&mut self, backend: &mut B) -> Result<Option<StopDecision>, SessionError> {
        let started = backend.now_ns();
        self.counters.triggers += 1;
        let result = self.pipeline(backend);
        let elapsed = backend.now_ns().saturating_sub(started);
        self.bs_time_ns += elapsed;
        self.pipeline_latencies_ns.push(elapsed);
        match result {
            Ok(Some(acceptance)) => {
                self.state = SessionState::StoppedAccepted;
                let decision = StopDecision::StopAccepted {
                    accepted_unit: acceptance.unit.clone(),
                    stop_index: acceptance.stop_index,
                };
                self.acceptance = Some(acceptance);
                Ok(Some(decision))
            }
            Ok(None) => Ok(None),
            Err(e) => {
                self.state = SessionState::Aborted;
                Err(e.into())
            }
        }
    }

    fn pipeline<B: Backend + ?Sized>(&mut self, backend: &mut B) -> Result<Option<Acceptance>, BackendError> {
        let language = self.config.language;
        let stripped = strip_fences(&self.text);
        let units = candidate_units(&stripped.text, language);
        if units.is_empty() {
            return Ok(None);
        }
        let preamble = extract_preamble(&stripped.text, language);

        let mut viable_units = Vec::new();
        let mut any_well_formed = false;
        for unit in units {
            if self.discard.check(&unit.canonical_text) {
                continue;
            }
            let key = (unit.canonical_text.clone(), preamble.clone());
            let verdict = match self.verdicts.get(&key) {
                Some(v) => v.clone(),
                None => {
                    self.counters.wellformedness_checks += 1;
                    let v = backend.check_wellformedness(&unit, &preamble, language)?;
                    self.verdicts.insert(key, v.clone());
                    v
                }
            };
            if should_discard(&verdict) {
                self.discard.insert(&unit.canonical_text);
                continue;
            }
            any_well_formed |= verdict == Verdict::WellFormed;
            if viable(&verdict) {
                viable_units.push(unit);
            }
        }
        if !any_well_formed {
            return Ok(None);
        }

        let harness = match assemble_harness(&viable_units, &preamble, &self.suite, language) {
            Ok(h) => h,
            Err(HarnessError::LanguageMismatch { .. }) | Err(HarnessError::NoCases) => {
                return Err(BackendError::Other("test suite cannot be run for this session".into()))
            }
            Err(_) => return Ok(None),
        };
        let outcome = match self.outcomes.get(&harness.source) {
            Some(o) => o.clone(),
            None => {
                self.counters.test_executions += 1;
                let o = backend.run_tests(&harness, self.config.test_timeout)?;
                self.outcomes.insert(harness.source.clone(), o.clone());
                o
            }
        };
        if !outcome.passed() {
            return Ok(None);
        }

        let unit = accepted_unit(&viable_units, &self.suite.entry_point, language)
            .cloned()
            .unwrap_or_else(|| viable_units[0].clone());
        let raw_span = stripped.to_raw_span(unit.char_span);
        Ok(Some(Acceptance {
            token_span: self.token_span(raw_span),
            raw_span,
            unit,
            stop_index: self.token_count(),
            harness_source: harness.source,
        }))
    }

    /// Inclusive token indices covering a raw byte span.
    pub fn token_span(&self, span: (usize, usize)) -> (usize, usize) {
        token_span(&self.token_ends, span)
    }
}

/// Inclusive token indices covering the raw byte span `[start, end)`, given
/// the byte offset just past each token.
pub fn token_span(token_ends: &[usize], (start, end): (usize, usize)) -> (usize, usize) {
    let first = token_ends.partition_point(|&e| e <= start);
    let last = token_ends.partition_point(|&e| e < end.max(start + 1));
    let cap = token_ends.len().saturating_sub(1);
    (first.min(cap), last.min(cap))
}

/// Result of checking a whole text once, without a session.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Evaluation {
    pub stripped: StrippedText,
    /// Units that went into the harness.
    pub units: Vec<CheckingUnit>,
    pub wellformedness_checks: u64,
    pub harness: Option<Harness>,
    pub outcome: Option<TestOutcome>,
    pub accepted: Option<CheckingUnit>,
}

impl Evaluation {
    pub fn passed(&self) -> bool {
        self.outcome.as_ref().is_some_and(TestOutcome::passed)
    }
}

/// Post-hoc evaluation of a finished generation with the same detection,
/// checking and assembly rules the session applies at a trigger point.
pub fn evaluate_text<B: Backend + ?Sized>(
    text: &str,
    suite: &TestSuite,
    language: Language,
    timeout: Duration,
    backend: &mut B,
) -> Result<Evaluation, BackendError> {
    let stripped = strip_fences(text);
    let preamble = extract_preamble(&stripped.text, language);
    let mut eval = Evaluation {
        stripped: stripped.clone(),
        units: Vec::new(),
        wellformedness_checks: 0,
        harness: None,
        outcome: None,
        accepted: None,
    };
    let mut any_well_formed = false;
    let mut seen: BTreeMap<String, Verdict> = BTreeMap::new();
    for unit in candidate_units(&stripped.text, language) {
        let verdict = match seen.get(&unit.canonical_text) {
            Some(v) => v.clone(),
            None => {
                eval.wellformedness_checks += 1;
                let v = backend.check_wellformedness(&unit, &preamble, language)?;
                seen.insert(unit.canonical_text.clone(), v.clone());
                v
            }
        };
        any_well_formed |= verdict == Verdict::WellFormed;
        if viable(&verdict) {
            eval.units.push(unit);
        }
    }
    if !any_well_formed {
        return Ok(eval);
    }
    if let Ok(harness) = assemble_harness(&eval.units, &preamble, suite, language) {
        let outcome = backend.run_tests(&harness, timeout)?;
        if outcome.passed() {
            eval.accepted = accepted_unit(&eval.units, &suite.entry_point, language)
                .cloned()
                .or_else(|| eval.units.first().cloned());
        }
        eval.harness = Some(harness);
        eval.outcome = Some(outcome);
    }
    Ok(eval)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::TriggerPolicy;
    use crate::harness::TestStatus;
    use crate::verdict::Diagnostic;
    use alloc::vec;
    use alloc::vec::Vec;
    use core::cell::Cell;

    /// Scripted backend: a unit is malformed when its last non-blank line
    /// ends with `:`, tests pass when the harness contains `expected`.
    struct Scripted {
        expected: &'static str,
        checks: Vec<String>,
        runs: Vec<String>,
        clock: Cell<u64>,
        fail_toolchain: bool,
    }

    impl Scripted {
        fn new(expected: &'static str) -> Self {
            Self {
                expected,
                checks: Vec::new(),
                runs: Vec::new(),
                clock: Cell::new(0),
                fail_toolchain: false,
            }
        }
    }

    impl Backend for Scripted {
        fn check_wellformedness(&mut self, unit: &CheckingUnit, _: &str, _: Language) -> Result<Verdict, BackendError> {
            if self.fail_toolchain {
                return Err(BackendError::ToolchainUnavailable("python3".into()));
            }
            self.checks.push(unit.canonical_text.clone());
            if unit.canonical_text.trim_end().ends_with(':') {
                Ok(Verdict::FatalMalformed(Diagnostic::new(DiagnosticCategory::SyntaxError, "expected an indented block")))
            } else {
                Ok(Verdict::WellFormed)
            }
        }

        fn run_tests(&mut self, harness: &Harness, _: Duration) -> Result<TestOutcome, BackendError> {
            self.runs.push(harness.source.clone());
            let status = if harness.source.contains(self.expected) {
                TestStatus::Passed
            } else {
                TestStatus::Failed { case: Some(0), message: "assert".into() }
            };
            Ok(TestOutcome::new(status, Duration::from_millis(1), Some(0)))
        }

        fn now_ns(&self) -> u64 {
            let t = self.clock.get() + 1000;
            self.clock.set(t);
            t
        }
    }

    fn square_suite() -> TestSuite {
        TestSuite {
            language: Language::PythonLike,
            cases: vec!["assert square(3) == 9".into()],
            entry_point: "square".into(),
            dependencies: vec![],
        }
    }

    fn session(policy: TriggerPolicy) -> Session {
        Session::new("sq", square_suite(), SessionConfig::new(Language::PythonLike).with_trigger(policy)).unwrap()
    }

    fn feed(s: &mut Session, b: &mut Scripted, texts: &[&str]) -> Vec<StopDecision> {
        texts
            .iter()
            .map(|t| {
                let ev = TokenEvent::text(s.token_count(), *t, 0);
                s.on_token(&ev, b).unwrap()
            })
            .collect()
    }

    #[test]
    fn walkthrough_by_lines() {
        let mut b = Scripted::new("x * x");
        let mut s = session(TriggerPolicy::EndOfLine);
        let d = feed(&mut s, &mut b, &["Here is a simple Python function.\n"]);
        assert_eq!(d, vec![StopDecision::Continue]);
        assert_eq!(s.counters().wellformedness_checks, 0);

        let d = feed(&mut s, &mut b, &["def square(x):", "\n"]);
        assert_eq!(d[1], StopDecision::Continue);
        assert!(s.discard_set().contains("def square(x):\n"));
        assert_eq!(s.counters().wellformedness_checks, 1);

        let d = feed(&mut s, &mut b, &["    return x * x", "\n"]);
        match &d[1] {
            StopDecision::StopAccepted { accepted_unit, stop_index } => {
                assert_eq!(accepted_unit.canonical_text, "def square(x):\n    return x * x\n");
                assert_eq!(*stop_index, 5);
            }
            other => panic!("unexpected {other:?}"),
        }
        let c = s.counters();
        assert_eq!((c.triggers, c.wellformedness_checks, c.test_executions, c.discard_hits), (3, 2, 1, 0));
        assert_eq!(s.state(), SessionState::StoppedAccepted);
        let acc = s.acceptance().unwrap();
        assert_eq!(acc.token_span, (1, 4));
        assert_eq!(s.pipeline_latencies().len(), 3);
        assert!(s.bs_time() > Duration::ZERO);

        let err = s.on_token(&TokenEvent::text(5, "more", 0), &mut b).unwrap_err();
        assert_eq!(err, SessionError::NotRunning(SessionState::StoppedAccepted));
    }

    #[test]
    fn index_mismatch_is_rejected_without_effect() {
        let mut b = Scripted::new("x");
        let mut s = session(TriggerPolicy::EveryToken);
        let err = s.on_token(&TokenEvent::text(3, "a", 0), &mut b).unwrap_err();
        assert_eq!(err, SessionError::IndexMismatch { expected: 0, got: 3 });
        assert_eq!(s.token_count(), 0);
        assert_eq!(s.state(), SessionState::Running);
        let err = s.on_token(&TokenEvent { index: 0, text: "x".into(), is_eos: true, arrival_time: 0 }, &mut b);
        assert_eq!(err.unwrap_err(), SessionError::EosWithText);
    }

    #[test]
    fn immediate_eos() {
        let mut b = Scripted::new("x");
        let mut s = session(TriggerPolicy::EndOfLine);
        assert_eq!(s.on_token(&TokenEvent::eos(0, 0), &mut b).unwrap(), StopDecision::StopEos);
        assert_eq!(s.token_count(), 0);
        assert_eq!(s.counters().test_executions, 0);
        assert_eq!(s.state(), SessionState::StoppedEos);
    }

    #[test]
    fn eos_runs_a_final_pass() {
        let mut b = Scripted::new("x * x");
        let mut s = session(TriggerPolicy::EndOfLine);
        feed(&mut s, &mut b, &["def square(x):\n", "    return x * x"]);
        assert_eq!(s.counters().test_executions, 0);
        let d = s.on_token(&TokenEvent::eos(2, 0), &mut b).unwrap();
        assert!(matches!(d, StopDecision::StopAccepted { stop_index: 2, .. }));
    }

    #[test]
    fn cap_reached() {
        let mut b = Scripted::new("never");
        let cfg = SessionConfig::new(Language::PythonLike).with_max_output_tokens(1000);
        let mut s = Session::new("sq", square_suite(), cfg).unwrap();
        for i in 0..999 {
            assert_eq!(s.on_token(&TokenEvent::text(i, "blah ", 0), &mut b).unwrap(), StopDecision::Continue);
        }
        assert_eq!(s.on_token(&TokenEvent::text(999, "blah", 0), &mut b).unwrap(), StopDecision::StopExhausted);
        assert_eq!(s.state(), SessionState::StoppedExhausted);
    }

    #[test]
    fn discarded_units_are_not_rechecked() {
        let mut b = Scripted::new("never");
        let mut s = session(TriggerPolicy::EndOfLine);
        feed(&mut s, &mut b, &["def square(x):\n", "print(1)\n"]);
        assert_eq!(s.counters().wellformedness_checks, 1);
        assert_eq!(s.counters().discard_hits, 1);
        feed(&mut s, &mut b, &["print(2)\n", "def square(x):\n", "print(3)\n"]);
        let c = s.counters();
        assert_eq!(c.wellformedness_checks, 1);
        assert_eq!(c.discard_hits, 1 + 2 + 3);
        assert_eq!(b.checks.len(), 1);
    }

    #[test]
    fn harness_results_are_memoized() {
        let mut b = Scripted::new("never");
        let mut s = session(TriggerPolicy::EveryToken);
        feed(&mut s, &mut b, &["def square(x):\n", "    return 1\n", "print(1)\n", "print(2)\n", "\n"]);
        assert_eq!(b.runs.len(), 1);
        assert_eq!(s.counters().test_executions, 1);
        assert_eq!(s.counters().wellformedness_checks, 2);
    }

    #[test]
    fn toolchain_failure_aborts() {
        let mut b = Scripted::new("x");
        b.fail_toolchain = true;
        let mut s = session(TriggerPolicy::EndOfLine);
        let err = s.on_token(&TokenEvent::text(0, "def f(x):\n", 0), &mut b).unwrap_err();
        assert!(matches!(err, SessionError::Backend(BackendError::ToolchainUnavailable(_))));
        assert_eq!(s.state(), SessionState::Aborted);
        assert!(s.on_token(&TokenEvent::text(1, "x", 0), &mut b).is_err());
    }

    #[test]
    fn zero_cap_rejected() {
        let cfg = SessionConfig::new(Language::PythonLike).with_max_output_tokens(0);
        assert!(matches!(Session::new("p", square_suite(), cfg), Err(SessionError::InvalidConfig(_))));
    }

    #[test]
    fn post_hoc_evaluation() {
        let mut b = Scripted::new("x * x");
        let text = "```python\ndef square(x):\n    return x * x\n```\nExplanation follows.\n";
        let eval = evaluate_text(text, &square_suite(), Language::PythonLike, Duration::from_secs(1), &mut b).unwrap();
        assert!(eval.passed());
        assert_eq!(eval.accepted.unwrap().name, "square");
        assert_eq!(eval.wellformedness_checks, 1);
        let eval = evaluate_text("no code here", &square_suite(), Language::PythonLike, Duration::from_secs(1), &mut b).unwrap();
        assert!(!eval.passed());
        assert!(eval.harness.is_none());
    }
}
