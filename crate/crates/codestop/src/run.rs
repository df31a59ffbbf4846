//! Driving one session, or one baseline generation, from a token source.

use std::time::{Instant, SystemTime, UNIX_EPOCH};

use codestop_core::metrics::{Mode, RunReport, StopReason};
use codestop_core::session::{evaluate_text, token_span};
use codestop_core::{Backend, BackendError, Counters, Session, SessionError, SessionState, StopDecision, TestSuite};
use serde::{Deserialize, Serialize};

use crate::bundle::ProblemBundle;
use crate::config::SuppressionConfig;
use crate::trace::TokenSource;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "message", rename_all = "snake_case")]
pub enum Terminal {
    Accepted,
    Eos,
    Exhausted,
    SourceError(String),
    ConfigError(String),
}

impl Terminal {
    pub fn stop_reason(&self) -> StopReason {
        match self {
            Terminal::Accepted => StopReason::Accepted,
            Terminal::Eos => StopReason::Eos,
            Terminal::Exhausted => StopReason::Exhausted,
            Terminal::SourceError(_) => StopReason::SourceError,
            Terminal::ConfigError(_) => StopReason::ConfigError,
        }
    }

    pub fn error(&self) -> Option<&str> {
        match self {
            Terminal::SourceError(m) | Terminal::ConfigError(m) => Some(m),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionResult {
    pub problem_id: String,
    pub terminal: Terminal,
    /// Tokens consumed when the session accepted.
    pub stop_index: Option<usize>,
    pub tokens_consumed: usize,
    /// Accumulated text up to the stop point.
    pub text: String,
    pub accepted_unit: Option<String>,
    pub accepted_token_span: Option<(usize, usize)>,
    pub harness_source: Option<String>,
    pub counters: Counters,
    pub bs_time_ns: u64,
    pub wall_time_ns: u64,
    /// Arrival time of each consumed token, relative to the source.
    pub token_times_ns: Vec<u64>,
    pub check_latencies_ns: Vec<u64>,
    pub window_start_unix_ns: u64,
    pub window_end_unix_ns: u64,
}

impl SessionResult {
    /// The result minus the fields that depend on timing.
    pub fn deterministic_view(&self) -> (Terminal, Option<usize>, usize, &str, Option<&str>, Counters) {
        (
            self.terminal.clone(),
            self.stop_index,
            self.tokens_consumed,
            &self.text,
            self.accepted_unit.as_deref(),
            self.counters,
        )
    }
}

pub fn unix_now_ns() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_nanos() as u64).unwrap_or(0)
}

/// Feeds the source into a suppression session until it stops.
pub fn run_session<S, B>(source: &mut S, problem: &ProblemBundle, config: &SuppressionConfig, backend: &mut B) -> SessionResult
where
    S: TokenSource + ?Sized,
    B: Backend + ?Sized,
{
    let window_start = unix_now_ns();
    let started = Instant::now();
    let mut result = SessionResult {
        problem_id: problem.id.clone(),
        terminal: Terminal::Exhausted,
        stop_index: None,
        tokens_consumed: 0,
        text: String::new(),
        accepted_unit: None,
        accepted_token_span: None,
        harness_source: None,
        counters: Counters::default(),
        bs_time_ns: 0,
        wall_time_ns: 0,
        token_times_ns: Vec::new(),
        check_latencies_ns: Vec::new(),
        window_start_unix_ns: window_start,
        window_end_unix_ns: window_start,
    };
    let mut session = match Session::new(problem.id.clone(), problem.suite(), config.session_config(problem.language)) {
        Ok(s) => s,
        Err(e) => {
            result.terminal = Terminal::ConfigError(e.to_string());
            return result;
        }
    };

    let terminal = loop {
        let event = match source.next_event() {
            Ok(Some(e)) => e,
            Ok(None) => match session.finish(backend) {
                Ok(Some(_)) => break Terminal::Accepted,
                Ok(None) => break Terminal::Exhausted,
                Err(e) => break session_error(e),
            },
            Err(e) => break Terminal::SourceError(e.to_string()),
        };
        if !event.is_eos {
            result.token_times_ns.push(event.arrival_time);
        }
        match session.on_token(&event, backend) {
            Ok(StopDecision::Continue) => {}
            Ok(StopDecision::StopAccepted { .. }) => break Terminal::Accepted,
            Ok(StopDecision::StopEos) => break Terminal::Eos,
            Ok(StopDecision::StopExhausted) => break Terminal::Exhausted,
            Err(e) => break session_error(e),
        }
    };
    if session.state() != SessionState::StoppedEos {
        source.cancel();
    }

    result.terminal = terminal;
    result.tokens_consumed = session.token_count();
    result.token_times_ns.truncate(result.tokens_consumed);
    result.text = session.accumulated_text().to_string();
    result.counters = session.counters();
    result.bs_time_ns = session.bs_time().as_nanos() as u64;
    result.check_latencies_ns = session.pipeline_latencies().to_vec();
    if let Some(a) = session.acceptance() {
        result.stop_index = Some(a.stop_index);
        result.accepted_unit = Some(a.unit.canonical_text.clone());
        result.accepted_token_span = Some(a.token_span);
        result.harness_source = Some(a.harness_source.clone());
    }
    result.wall_time_ns = started.elapsed().as_nanos() as u64;
    result.window_end_unix_ns = unix_now_ns();
    result
}

fn session_error(e: SessionError) -> Terminal {
    match e {
        SessionError::Backend(BackendError::ToolchainUnavailable(m)) => Terminal::ConfigError(m),
        SessionError::InvalidConfig(c) => Terminal::ConfigError(c.to_string()),
        other => Terminal::SourceError(other.to_string()),
    }
}

/// Outcome of an uninterrupted generation with one post-hoc test run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineResult {
    pub problem_id: String,
    pub terminal: Terminal,
    pub tokens_consumed: usize,
    pub text: String,
    pub passed: bool,
    pub accepted_unit: Option<String>,
    pub accepted_token_span: Option<(usize, usize)>,
    pub wellformedness_checks: u64,
    pub test_executions: u64,
    pub wall_time_ns: u64,
    pub window_start_unix_ns: u64,
    pub window_end_unix_ns: u64,
}

/// Consumes the source to end-of-generation or the token cap, then applies
/// the same extraction and a single test run.
pub fn run_baseline<S, B>(source: &mut S, problem: &ProblemBundle, config: &SuppressionConfig, backend: &mut B) -> BaselineResult
where
    S: TokenSource + ?Sized,
    B: Backend + ?Sized,
{
    let window_start = unix_now_ns();
    let started = Instant::now();
    let mut text = String::new();
    let mut token_ends = Vec::new();
    let mut terminal = Terminal::Exhausted;
    loop {
        if token_ends.len() >= config.max_output_tokens {
            source.cancel();
            break;
        }
        match source.next_event() {
            Ok(Some(e)) if e.is_eos => {
                terminal = Terminal::Eos;
                break;
            }
            Ok(Some(e)) => {
                text.push_str(&e.text);
                token_ends.push(text.len());
            }
            Ok(None) => break,
            Err(e) => {
                terminal = Terminal::SourceError(e.to_string());
                break;
            }
        }
    }
    let mut result = BaselineResult {
        problem_id: problem.id.clone(),
        terminal,
        tokens_consumed: token_ends.len(),
        text,
        passed: false,
        accepted_unit: None,
        accepted_token_span: None,
        wellformedness_checks: 0,
        test_executions: 0,
        wall_time_ns: 0,
        window_start_unix_ns: window_start,
        window_end_unix_ns: window_start,
    };
    if result.terminal.error().is_none() {
        let suite: TestSuite = problem.suite();
        match evaluate_text(&result.text, &suite, problem.language, config.test_timeout(), backend) {
            Ok(eval) => {
                result.wellformedness_checks = eval.wellformedness_checks;
                result.test_executions = u64::from(eval.outcome.is_some());
                result.passed = eval.passed();
                if let Some(unit) = eval.accepted.as_ref().filter(|_| result.passed) {
                    let raw = eval.stripped.to_raw_span(unit.char_span);
                    result.accepted_token_span = Some(token_span(&token_ends, raw));
                    result.accepted_unit = Some(unit.canonical_text.clone());
                }
            }
            Err(BackendError::ToolchainUnavailable(m)) => result.terminal = Terminal::ConfigError(m),
            Err(e) => result.terminal = Terminal::SourceError(e.to_string()),
        }
    }
    result.wall_time_ns = started.elapsed().as_nanos() as u64;
    result.window_end_unix_ns = unix_now_ns();
    result
}

fn base_report(problem: &ProblemBundle, model_id: &str, mode: Mode) -> RunReport {
    RunReport {
        problem_id: problem.id.clone(),
        model_id: model_id.into(),
        benchmark: problem.benchmark.clone(),
        language: problem.language,
        mode,
        tokens_generated: 0,
        stop_reason: StopReason::Exhausted,
        passed: false,
        wall_time_ns: 0,
        mean_time_per_token_ns: None,
        bs_time_ns: 0,
        wellformedness_checks: 0,
        test_executions: 0,
        discard_hits: 0,
        check_latencies_ns: Vec::new(),
        accepted_token_span: None,
        window_start_unix_ns: 0,
        window_end_unix_ns: 0,
        energy_joules: None,
        energy_per_token: None,
        error: None,
    }
}

fn per_token(wall_ns: u64, tokens: usize) -> Option<f64> {
    (tokens > 0).then(|| wall_ns as f64 / tokens as f64)
}

impl SessionResult {
    pub fn report(&self, problem: &ProblemBundle, model_id: &str) -> RunReport {
        RunReport {
            tokens_generated: self.tokens_consumed,
            stop_reason: self.terminal.stop_reason(),
            passed: self.terminal == Terminal::Accepted,
            wall_time_ns: self.wall_time_ns,
            mean_time_per_token_ns: per_token(self.wall_time_ns, self.tokens_consumed),
            bs_time_ns: self.bs_time_ns,
            wellformedness_checks: self.counters.wellformedness_checks,
            test_executions: self.counters.test_executions,
            discard_hits: self.counters.discard_hits,
            check_latencies_ns: self.check_latencies_ns.clone(),
            accepted_token_span: self.accepted_token_span,
            window_start_unix_ns: self.window_start_unix_ns,
            window_end_unix_ns: self.window_end_unix_ns,
            error: self.terminal.error().map(String::from),
            ..base_report(problem, model_id, Mode::Bs)
        }
    }
}

impl BaselineResult {
    pub fn report(&self, problem: &ProblemBundle, model_id: &str) -> RunReport {
        RunReport {
            tokens_generated: self.tokens_consumed,
            stop_reason: self.terminal.stop_reason(),
            passed: self.passed,
            wall_time_ns: self.wall_time_ns,
            mean_time_per_token_ns: per_token(self.wall_time_ns, self.tokens_consumed),
            wellformedness_checks: self.wellformedness_checks,
            test_executions: self.test_executions,
            accepted_token_span: self.accepted_token_span,
            window_start_unix_ns: self.window_start_unix_ns,
            window_end_unix_ns: self.window_end_unix_ns,
            error: self.terminal.error().map(String::from),
            ..base_report(problem, model_id, Mode::Baseline)
        }
    }
}

/// Report for a trace whose problem is not in the corpus.
pub fn invalid_report(problem_id: &str, model_id: &str, language: codestop_core::Language, mode: Mode) -> RunReport {
    let stub = ProblemBundle {
        id: problem_id.into(),
        language,
        benchmark: "unknown".into(),
        prompt: String::new(),
        entry_point: String::new(),
        tests: Vec::new(),
        dependencies: Vec::new(),
        canonical_solution: None,
    };
    RunReport {
        stop_reason: StopReason::Invalid,
        error: Some(format!("problem {problem_id} is not in the corpus")),
        ..base_report(&stub, model_id, mode)
    }
}
