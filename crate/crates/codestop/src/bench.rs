//! Baseline and suppression runs over a corpus, reports and offline analyses.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Mutex;

use anyhow::Context;
use codestop_core::metrics::{
    integrate_energy, position_likelihood, DeltaReport, Mode, PositionAnalysis, PositionSample, RunReport, StopReason,
};
use codestop_core::Language;
use rayon::prelude::*;

use crate::backend::{verify_dependencies, ProcessBackend};
use crate::bundle::ProblemBundle;
use crate::config::SuppressionConfig;
use crate::endpoint::{open_stream, EndpointConfig};
use crate::run::{invalid_report, run_baseline, run_session};
use crate::trace::{Recorder, ReplaySource, TokenSource, TraceRecord};

pub enum Input {
    Traces(Vec<TraceRecord>),
    /// One live generation per bundle; transcripts are returned for replay.
    Endpoint(EndpointConfig),
}

#[derive(Debug, Default)]
pub struct BenchOutput {
    /// Sorted by (model, benchmark, problem).
    pub reports: Vec<RunReport>,
    pub transcripts: Vec<TraceRecord>,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("toolchain unavailable: {message} ({} problems completed before the abort)", partial.reports.len())]
    Toolchain { message: String, partial: BenchOutput },
    #[error("invalid configuration: {0}")]
    Config(String),
}

struct Job<'a> {
    bundle: Option<&'a ProblemBundle>,
    problem_id: String,
    model_id: String,
    language: Language,
    trace: Option<&'a TraceRecord>,
}

pub fn run_benchmark(
    corpus: &BTreeMap<String, ProblemBundle>,
    input: &Input,
    mode: Mode,
    config: &SuppressionConfig,
) -> Result<BenchOutput, BenchError> {
    config.validate().map_err(|e| BenchError::Config(e.to_string()))?;
    let jobs: Vec<Job> = match input {
        Input::Traces(traces) => traces
            .iter()
            .map(|t| Job {
                bundle: corpus.get(&t.problem_id).filter(|b| b.language == t.language),
                problem_id: t.problem_id.clone(),
                model_id: t.model_id.clone(),
                language: t.language,
                trace: Some(t),
            })
            .collect(),
        Input::Endpoint(endpoint) => {
            endpoint.validate(config.max_output_tokens).map_err(BenchError::Config)?;
            corpus
                .values()
                .map(|b| Job {
                    bundle: Some(b),
                    problem_id: b.id.clone(),
                    model_id: endpoint.model.clone(),
                    language: b.language,
                    trace: None,
                })
                .collect()
        }
    };

    let mut needed: BTreeMap<Language, BTreeSet<String>> = BTreeMap::new();
    for job in &jobs {
        if let Some(b) = job.bundle {
            let deps = needed.entry(b.language).or_default();
            deps.extend(config.dependencies.iter().cloned());
            deps.extend(b.dependencies.iter().cloned());
        }
    }
    for (language, deps) in needed {
        let deps: Vec<String> = deps.into_iter().collect();
        if let Err(e) = verify_dependencies(&config.toolchain, language, &deps) {
            return Err(BenchError::Toolchain {
                message: e.to_string(),
                partial: BenchOutput::default(),
            });
        }
    }

    let abort: Mutex<Option<String>> = Mutex::new(None);
    let aborted = AtomicBool::new(false);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers.max(1))
        .build()
        .map_err(|e| BenchError::Config(e.to_string()))?;
    let results: Vec<(RunReport, Option<TraceRecord>)> = pool.install(|| {
        jobs.par_iter()
            .filter_map(|job| {
                if aborted.load(Ordering::Acquire) {
                    return None;
                }
                match run_job(job, input, mode, config) {
                    Ok(r) => Some(r),
                    Err(message) => {
                        aborted.store(true, Ordering::Release);
                        abort.lock().unwrap().get_or_insert(message);
                        None
                    }
                }
            })
            .collect()
    });

    let mut out = BenchOutput::default();
    for (report, transcript) in results {
        out.reports.push(report);
        out.transcripts.extend(transcript);
    }
    sort_reports(&mut out.reports);
    out.transcripts
        .sort_by(|a, b| (&a.model_id, &a.problem_id).cmp(&(&b.model_id, &b.problem_id)));
    match abort.into_inner().unwrap() {
        Some(message) => Err(BenchError::Toolchain { message, partial: out }),
        None => Ok(out),
    }
}

pub fn sort_reports(reports: &mut [RunReport]) {
    reports.sort_by(|a, b| {
        (&a.model_id, &a.benchmark, &a.problem_id, a.mode).cmp(&(&b.model_id, &b.benchmark, &b.problem_id, b.mode))
    });
}

/// Runs one problem. `Err` carries a toolchain failure that aborts the run.
fn run_job(
    job: &Job,
    input: &Input,
    mode: Mode,
    config: &SuppressionConfig,
) -> Result<(RunReport, Option<TraceRecord>), String> {
    let Some(bundle) = job.bundle else {
        log::warn!("{}: no matching problem bundle", job.problem_id);
        return Ok((invalid_report(&job.problem_id, &job.model_id, job.language, mode), None));
    };
    let mut backend = ProcessBackend::new(config.toolchain.clone())
        .map_err(|e| e.to_string())?
        .with_timeout_mode(config.timeout_mode());
    let (report, transcript) = match (input, job.trace) {
        (_, Some(trace)) => {
            let mut source = ReplaySource::new(trace.clone());
            (execute(&mut source, bundle, &job.model_id, mode, config, &mut backend), None)
        }
        (Input::Endpoint(endpoint), None) => {
            let mut source: Recorder<Box<dyn TokenSource>> = match open_stream(endpoint, &bundle.prompt) {
                Ok(s) => Recorder::new(Box::new(s)),
                Err(e) => {
                    let mut r = invalid_report(&bundle.id, &job.model_id, bundle.language, mode);
                    r.benchmark = bundle.benchmark.clone();
                    r.stop_reason = StopReason::SourceError;
                    r.error = Some(e.to_string());
                    return Ok((r, None));
                }
            };
            let report = execute(&mut source, bundle, &job.model_id, mode, config, &mut backend);
            let trace = source.trace(&bundle.id, &endpoint.model, bundle.language, endpoint.temperature, endpoint.top_p);
            (report, Some(trace))
        }
        (Input::Traces(_), None) => unreachable!("trace jobs always carry a trace"),
    };
    if report.stop_reason == StopReason::ConfigError {
        return Err(format!("{}: {}", bundle.id, report.error.clone().unwrap_or_default()));
    }
    log::info!(
        "{} {:?}: {} tokens, {:?}, passed={}",
        bundle.id,
        mode,
        report.tokens_generated,
        report.stop_reason,
        report.passed
    );
    Ok((report, transcript))
}

fn execute<S: TokenSource + ?Sized>(
    source: &mut S,
    bundle: &ProblemBundle,
    model_id: &str,
    mode: Mode,
    config: &SuppressionConfig,
    backend: &mut ProcessBackend,
) -> RunReport {
    match mode {
        Mode::Baseline => run_baseline(source, bundle, config, backend).report(bundle, model_id),
        Mode::Bs => run_session(source, bundle, config, backend).report(bundle, model_id),
    }
}

pub fn read_reports(path: &Path) -> anyhow::Result<Vec<RunReport>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn write_json<T: serde::Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))
}

fn ms(ns: u64) -> f64 {
    ns as f64 / 1e6
}

/// Columnar per-problem table.
pub fn reports_table(reports: &[RunReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<24} {:<20} {:<9} {:>6} {:<11} {:<6} {:>10} {:>10} {:>6} {:>6}",
        "problem", "model", "mode", "tokens", "stop", "passed", "wall_ms", "bs_ms", "checks", "tests"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<24} {:<20} {:<9} {:>6} {:<11} {:<6} {:>10.1} {:>10.1} {:>6} {:>6}",
            r.problem_id,
            r.model_id,
            format!("{:?}", r.mode).to_lowercase(),
            r.tokens_generated,
            format!("{:?}", r.stop_reason).to_lowercase(),
            r.passed,
            ms(r.wall_time_ns),
            ms(r.bs_time_ns),
            r.wellformedness_checks,
            r.test_executions
        );
    }
    s
}

fn pct(d: Option<f64>) -> String {
    d.map(|v| format!("{v:+.1}%")).unwrap_or_else(|| "-".into())
}

/// Aggregate table with the model × benchmark layout.
pub fn delta_table(report: &DeltaReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<20} {:<12} {:>5} {:>9} {:>9} {:>8} {:>9} {:>9} {:>10} {:>10} {:>8} {:>8} {:>8}",
        "model", "benchmark", "n", "tok_base", "tok_bs", "tok_d", "pass_base", "pass_bs", "cost_base", "cost_bs", "cost_d",
        "tests", "chk_ms"
    );
    for r in &report.rows {
        // Energy when every report has it, wall time otherwise.
        let (cb, cs, cd) = match r.energy_joules {
            Some(e) => (format!("{:.1}J", e.baseline), format!("{:.1}J", e.bs), pct(e.delta_pct)),
            None => (
                format!("{:.2}s", r.wall_time_s.baseline),
                format!("{:.2}s", r.wall_time_s.bs),
                pct(r.wall_time_s.delta_pct),
            ),
        };
        let _ = writeln!(
            s,
            "{:<20} {:<12} {:>5} {:>9.1} {:>9.1} {:>8} {:>9.3} {:>9.3} {:>10} {:>10} {:>8} {:>8.2} {:>8}",
            r.model,
            r.benchmark,
            r.problems,
            r.tokens.baseline,
            r.tokens.bs,
            pct(r.tokens.delta_pct),
            r.pass_at_1_baseline.value(),
            r.pass_at_1_bs.value(),
            cb,
            cs,
            cd,
            r.mean_test_executions_bs,
            r.mean_check_latency_ms.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into()),
        );
    }
    s
}

/// Joins traces with reports (by model and problem) into position samples.
/// Traces without a valid report are skipped.
pub fn position_samples(traces: &[TraceRecord], reports: &[RunReport]) -> Vec<PositionSample> {
    let by_key: BTreeMap<(&str, &str), &RunReport> = reports
        .iter()
        .filter(|r| r.is_valid())
        .map(|r| ((r.model_id.as_str(), r.problem_id.as_str()), r))
        .collect();
    traces
        .iter()
        .filter_map(|t| {
            let r = by_key.get(&(t.model_id.as_str(), t.problem_id.as_str()));
            if r.is_none() {
                log::warn!("{}/{}: no report for trace", t.model_id, t.problem_id);
            }
            let r = r?;
            Some(PositionSample {
                output_len: r.tokens_generated,
                accepted_span: r.accepted_token_span.filter(|_| r.passed),
            })
        })
        .collect()
}

pub fn analyze_positions(traces: &[TraceRecord], reports: &[RunReport], max_index: usize, bin_width: usize) -> PositionAnalysis {
    position_likelihood(&position_samples(traces, reports), max_index, bin_width)
}

/// Tab-separated curve and histogram columns.
pub fn position_columns(analysis: &PositionAnalysis) -> (String, String) {
    let mut curve = String::from("index\tlikelihood\n");
    for (i, p) in analysis.curve.iter().enumerate() {
        let _ = writeln!(curve, "{i}\t{p}");
    }
    let mut hist = String::from("start\tend\tcount\n");
    for b in &analysis.length_histogram {
        let _ = writeln!(hist, "{}\t{}\t{}", b.start, b.end, b.count);
    }
    (curve, hist)
}

/// Reads `timestamp_ns watts` lines. `#` starts a comment.
pub fn read_power_log(path: &Path) -> anyhow::Result<Vec<(u64, f64)>> {
    let file = std::fs::File::open(path).with_context(|| format!("reading {}", path.display()))?;
    let mut samples = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let parsed = match (fields.next(), fields.next(), fields.next()) {
            (Some(t), Some(w), None) => t.parse::<u64>().ok().zip(w.parse::<f64>().ok()),
            _ => None,
        };
        let sample = parsed.with_context(|| format!("{}:{}: expected `timestamp_ns watts`", path.display(), n + 1))?;
        samples.push(sample);
    }
    Ok(samples)
}

/// Fills energy fields from a power log. Returns one warning per report
/// whose window the log does not cover.
pub fn fill_energy(reports: &mut [RunReport], samples: &[(u64, f64)]) -> Vec<String> {
    let mut warnings = Vec::new();
    for r in reports.iter_mut().filter(|r| r.is_valid()) {
        match integrate_energy(samples, (r.window_start_unix_ns, r.window_end_unix_ns), r.tokens_generated) {
            Ok(e) => r.set_energy(e.joules),
            Err(e) => warnings.push(format!("{}/{} {:?}: {e}", r.model_id, r.problem_id, r.mode)),
        }
    }
    warnings
}
