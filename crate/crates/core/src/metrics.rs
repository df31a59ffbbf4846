//! Report records and the metrics computed over them: pass@1, baseline vs.
//! suppression deltas, token position likelihood and energy integration.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::lang::Language;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Baseline,
    Bs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Accepted,
    Eos,
    Exhausted,
    SourceError,
    ConfigError,
    /// The trace referenced a problem that is not in the corpus.
    Invalid,
}

/// Per-problem, per-mode measurements.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub problem_id: String,
    pub model_id: String,
    pub benchmark: String,
    pub language: Language,
    pub mode: Mode,
    pub tokens_generated: usize,
    pub stop_reason: StopReason,
    pub passed: bool,
    pub wall_time_ns: u64,
    pub mean_time_per_token_ns: Option<f64>,
    pub bs_time_ns: u64,
    pub wellformedness_checks: u64,
    pub test_executions: u64,
    pub discard_hits: u64,
    /// Wall time of each checking-pipeline run.
    pub check_latencies_ns: Vec<u64>,
    /// Inclusive token-index span of the unit that passed, if any.
    pub accepted_token_span: Option<(usize, usize)>,
    /// Session window on the wall clock, for matching power logs.
    pub window_start_unix_ns: u64,
    pub window_end_unix_ns: u64,
    pub energy_joules: Option<f64>,
    pub energy_per_token: Option<f64>,
    #[serde(default)]
    pub error: Option<String>,
}

impl RunReport {
    pub fn is_valid(&self) -> bool {
        self.stop_reason != StopReason::Invalid
    }

    /// Attaches a measured energy value; per-token energy is only defined
    /// for a non-empty generation.
    pub fn set_energy(&mut self, joules: f64) {
        self.energy_joules = Some(joules);
        self.energy_per_token = (self.tokens_generated > 0).then(|| joules / self.tokens_generated as f64);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricsError {
    #[error("no reports")]
    Empty,
    #[error("reports mix modes")]
    MixedModes,
    #[error("problem sets differ; only in baseline: {only_baseline:?}; only in bs: {only_bs:?}")]
    IdMismatch {
        only_baseline: Vec<String>,
        only_bs: Vec<String>,
    },
}

/// Exact pass@1 as a rational.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PassAt1 {
    pub passed: usize,
    pub total: usize,
}

impl PassAt1 {
    pub fn value(&self) -> f64 {
        self.passed as f64 / self.total as f64
    }
}

pub fn pass_at_1(reports: &[RunReport]) -> Result<PassAt1, MetricsError> {
    let first = reports.first().ok_or(MetricsError::Empty)?;
    if reports.iter().any(|r| r.mode != first.mode) {
        return Err(MetricsError::MixedModes);
    }
    Ok(PassAt1 {
        passed: reports.iter().filter(|r| r.passed).count(),
        total: reports.len(),
    })
}

/// `(baseline - bs) / baseline * 100`; positive means savings.
pub fn delta_pct(baseline: f64, bs: f64) -> Option<f64> {
    (baseline != 0.0).then(|| (baseline - bs) / baseline * 100.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanDelta {
    pub baseline: f64,
    pub bs: f64,
    pub delta_pct: Option<f64>,
}

impl MeanDelta {
    pub fn new(baseline: f64, bs: f64) -> Self {
        Self {
            baseline,
            bs,
            delta_pct: delta_pct(baseline, bs),
        }
    }
}

/// Aggregate comparison for one model and benchmark.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub model: String,
    pub benchmark: String,
    pub problems: usize,
    pub tokens: MeanDelta,
    pub wall_time_s: MeanDelta,
    pub energy_joules: Option<MeanDelta>,
    pub energy_per_token: Option<MeanDelta>,
    pub pass_at_1_baseline: PassAt1,
    pub pass_at_1_bs: PassAt1,
    pub mean_test_executions_baseline: f64,
    pub mean_test_executions_bs: f64,
    pub mean_check_latency_ms: Option<f64>,
}

/// One problem in both modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedRow {
    pub model: String,
    pub benchmark: String,
    pub problem_id: String,
    pub tokens_baseline: usize,
    pub tokens_bs: usize,
    pub passed_baseline: bool,
    pub passed_bs: bool,
    pub wall_time_ns_baseline: u64,
    pub wall_time_ns_bs: u64,
    pub energy_joules_baseline: Option<f64>,
    pub energy_joules_bs: Option<f64>,
    pub test_executions_bs: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaReport {
    pub rows: Vec<DeltaRow>,
    pub pairs: Vec<PairedRow>,
}

fn mean<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let (sum, n) = values.into_iter().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

fn all_some<'a, F: Fn(&RunReport) -> Option<f64>>(reports: &[&'a RunReport], f: F) -> Option<f64> {
    let values: Option<Vec<f64>> = reports.iter().map(|r| f(r)).collect();
    values.map(mean)
}

type Key = (String, String, String);

fn key(r: &RunReport) -> Key {
    (r.model_id.clone(), r.benchmark.clone(), r.problem_id.clone())
}

/// Pairs baseline and suppression reports by (model, benchmark, problem) and
/// aggregates per (model, benchmark). Invalid reports are ignored.
pub fn compare_reports(baseline: &[RunReport], bs: &[RunReport]) -> Result<DeltaReport, MetricsError> {
    let base: BTreeMap<Key, &RunReport> = baseline.iter().filter(|r| r.is_valid()).map(|r| (key(r), r)).collect();
    let supp: BTreeMap<Key, &RunReport> = bs.iter().filter(|r| r.is_valid()).map(|r| (key(r), r)).collect();
    let bk: BTreeSet<&Key> = base.keys().collect();
    let sk: BTreeSet<&Key> = supp.keys().collect();
    if bk != sk {
        let fmt = |k: &&Key| alloc::format!("{}/{}/{}", k.0, k.1, k.2);
        return Err(MetricsError::IdMismatch {
            only_baseline: bk.difference(&sk).map(fmt).collect(),
            only_bs: sk.difference(&bk).map(fmt).collect(),
        });
    }
    if base.is_empty() {
        return Err(MetricsError::Empty);
    }

    let mut groups: BTreeMap<(String, String), Vec<(&RunReport, &RunReport)>> = BTreeMap::new();
    let mut pairs = Vec::new();
    for (k, b) in &base {
        let s = supp[k];
        groups.entry((k.0.clone(), k.1.clone())).or_default().push((b, s));
        pairs.push(PairedRow {
            model: k.0.clone(),
            benchmark: k.1.clone(),
            problem_id: k.2.clone(),
            tokens_baseline: b.tokens_generated,
            tokens_bs: s.tokens_generated,
            passed_baseline: b.passed,
            passed_bs: s.passed,
            wall_time_ns_baseline: b.wall_time_ns,
            wall_time_ns_bs: s.wall_time_ns,
            energy_joules_baseline: b.energy_joules,
            energy_joules_bs: s.energy_joules,
            test_executions_bs: s.test_executions,
        });
    }

    let rows = groups
        .into_iter()
        .map(|((model, benchmark), pairs)| {
            let b: Vec<&RunReport> = pairs.iter().map(|p| p.0).collect();
            let s: Vec<&RunReport> = pairs.iter().map(|p| p.1).collect();
            let tokens = |rs: &[&RunReport]| mean(rs.iter().map(|r| r.tokens_generated as f64));
            let wall = |rs: &[&RunReport]| mean(rs.iter().map(|r| r.wall_time_ns as f64 / 1e9));
            let energy = match (all_some(&b, |r| r.energy_joules), all_some(&s, |r| r.energy_joules)) {
                (Some(x), Some(y)) => Some(MeanDelta::new(x, y)),
                _ => None,
            };
            let per_token = match (all_some(&b, |r| r.energy_per_token), all_some(&s, |r| r.energy_per_token)) {
                (Some(x), Some(y)) => Some(MeanDelta::new(x, y)),
                _ => None,
            };
            let latencies: Vec<f64> = s
                .iter()
                .flat_map(|r| r.check_latencies_ns.iter().map(|&l| l as f64 / 1e6))
                .collect();
            let pass = |rs: &[&RunReport]| PassAt1 {
                passed: rs.iter().filter(|r| r.passed).count(),
                total: rs.len(),
            };
            DeltaRow {
                model,
                benchmark,
                problems: b.len(),
                tokens: MeanDelta::new(tokens(&b), tokens(&s)),
                wall_time_s: MeanDelta::new(wall(&b), wall(&s)),
                energy_joules: energy,
                energy_per_token: per_token,
                pass_at_1_baseline: pass(&b),
                pass_at_1_bs: pass(&s),
                mean_test_executions_baseline: mean(b.iter().map(|r| r.test_executions as f64)),
                mean_test_executions_bs: mean(s.iter().map(|r| r.test_executions as f64)),
                mean_check_latency_ms: (!latencies.is_empty()).then(|| mean(latencies)),
            }
        })
        .collect();
    Ok(DeltaReport { rows, pairs })
}

/// One trace for the position analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PositionSample {
    pub output_len: usize,
    /// Inclusive token span of the test-passing unit; `None` for failing
    /// traces.
    pub accepted_span: Option<(usize, usize)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub start: usize,
    pub end: usize,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PositionAnalysis {
    pub traces: usize,
    pub passing: usize,
    /// Probability that the token at each index belongs to a test-passing
    /// solution, over all traces.
    pub curve: Vec<f64>,
    pub length_histogram: Vec<HistogramBin>,
    pub mean_first_index: Option<f64>,
    pub mean_last_index: Option<f64>,
}

pub fn position_likelihood(samples: &[PositionSample], max_index: usize, bin_width: usize) -> PositionAnalysis {
    if samples.is_empty() || max_index == 0 {
        return PositionAnalysis {
            traces: samples.len(),
            passing: 0,
            curve: Vec::new(),
            length_histogram: Vec::new(),
            mean_first_index: None,
            mean_last_index: None,
        };
    }
    let bin_width = bin_width.max(1);
    let mut covered = vec![0usize; max_index];
    let mut passing = 0;
    let mut firsts = Vec::new();
    let mut lasts = Vec::new();
    for s in samples {
        if let Some((a, b)) = s.accepted_span {
            passing += 1;
            firsts.push(a as f64);
            lasts.push(b as f64);
            for c in covered.iter_mut().take(b.saturating_add(1).min(max_index)).skip(a) {
                *c += 1;
            }
        }
    }
    let total = samples.len() as f64;
    let curve = covered.iter().map(|&c| c as f64 / total).collect();

    let bins = max_index.div_ceil(bin_width);
    let mut length_histogram: Vec<HistogramBin> = (0..bins)
        .map(|i| HistogramBin {
            start: i * bin_width,
            end: ((i + 1) * bin_width).min(max_index),
            count: 0,
        })
        .collect();
    for s in samples {
        let bin = (s.output_len / bin_width).min(bins - 1);
        length_histogram[bin].count += 1;
    }
    PositionAnalysis {
        traces: samples.len(),
        passing,
        curve,
        length_histogram,
        mean_first_index: (!firsts.is_empty()).then(|| mean(firsts)),
        mean_last_index: (!lasts.is_empty()).then(|| mean(lasts)),
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EnergyError {
    #[error("no power samples")]
    NoSamples,
    #[error("power samples are not in time order")]
    Unsorted,
    #[error("window [{start}, {end}] is empty or reversed")]
    EmptyWindow { start: u64, end: u64 },
    #[error("window [{start}, {end}] is outside the sampled range [{first}, {last}]")]
    OutsideSamples { start: u64, end: u64, first: u64, last: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Energy {
    pub mean_watts: f64,
    pub joules: f64,
    /// Absent when no tokens were generated.
    pub joules_per_token: Option<f64>,
}

fn interpolate(a: (u64, f64), b: (u64, f64), t: u64) -> f64 {
    if b.0 == a.0 {
        return a.1;
    }
    let frac = (t - a.0) as f64 / (b.0 - a.0) as f64;
    a.1 + (b.1 - a.1) * frac
}

/// Energy over a window as time-weighted mean power times duration.
/// Power between samples is taken as linear (trapezoidal integration), so the
/// result is linear in the power series.
pub fn integrate_energy(
    samples: &[(u64, f64)],
    window: (u64, u64),
    tokens: usize,
) -> Result<Energy, EnergyError> {
    let (start, end) = window;
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(f), Some(l)) => (f.0, l.0),
        _ => return Err(EnergyError::NoSamples),
    };
    if samples.windows(2).any(|w| w[1].0 < w[0].0) {
        return Err(EnergyError::Unsorted);
    }
    if end <= start {
        return Err(EnergyError::EmptyWindow { start, end });
    }
    if start < first || end > last {
        return Err(EnergyError::OutsideSamples { start, end, first, last });
    }
    let mut joules = 0.0;
    for w in samples.windows(2) {
        let (a, b) = (w[0], w[1]);
        let lo = a.0.max(start);
        let hi = b.0.min(end);
        if hi <= lo {
            continue;
        }
        let p_lo = interpolate(a, b, lo);
        let p_hi = interpolate(a, b, hi);
        joules += (p_lo + p_hi) / 2.0 * ((hi - lo) as f64 / 1e9);
    }
    let duration_s = (end - start) as f64 / 1e9;
    Ok(Energy {
        mean_watts: joules / duration_s,
        joules,
        joules_per_token: (tokens > 0).then(|| joules / tokens as f64),
    })
}
