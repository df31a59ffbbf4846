use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use codestop::bench::{self, BenchError, Input};
use codestop::config::{SuppressionConfig, TriggerKind};
use codestop::endpoint::EndpointConfig;
use codestop::trace::{read_traces, TraceWriter};
use codestop_core::metrics::{compare_reports, Mode};

#[derive(Parser)]
#[command(name = "codestop", version, about = "Stop code generation as soon as a test-passing function exists")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Baseline,
    Bs,
}

#[derive(Subcommand)]
enum Command {
    /// Run a corpus in baseline or suppression mode.
    Run {
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Directory of problem bundles (*.json).
        #[arg(long)]
        corpus: PathBuf,
        /// Line-delimited trace file to replay.
        #[arg(long, conflicts_with = "endpoint", required_unless_present = "endpoint")]
        traces: Option<PathBuf>,
        /// Streaming endpoint configuration (TOML).
        #[arg(long)]
        endpoint: Option<PathBuf>,
        /// Suppression configuration (TOML).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
        /// Test timeout in seconds.
        #[arg(long)]
        timeout: Option<f64>,
        #[arg(long, value_enum)]
        trigger: Option<TriggerKind>,
    },
    /// Compare baseline and suppression reports.
    Compare {
        #[arg(long)]
        baseline: PathBuf,
        #[arg(long)]
        bs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Token position likelihood of test-passing solutions.
    AnalyzePositions {
        #[arg(long)]
        traces: PathBuf,
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1000)]
        max_index: usize,
        #[arg(long, default_value_t = 50)]
        bin_width: usize,
    },
    /// Attach energy from a power-sample log to reports.
    Energy {
        #[arg(long)]
        samples: PathBuf,
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run {
            mode,
            corpus,
            traces,
            endpoint,
            config,
            out,
            workers,
            timeout,
            trigger,
        } => {
            let mut cfg = match config {
                Some(p) => SuppressionConfig::load(&p)?,
                None => SuppressionConfig::default(),
            };
            if let Some(w) = workers {
                cfg.workers = w;
            }
            if let Some(t) = timeout {
                cfg.test_timeout_secs = t;
            }
            if trigger.is_some() {
                cfg.trigger = trigger;
            }
            cfg.validate()?;
            let corpus = codestop::bundle::load_corpus(&corpus)?;
            let input = match (traces, endpoint) {
                (Some(t), _) => Input::Traces(read_traces(&t)?),
                (None, Some(e)) => Input::Endpoint(EndpointConfig::load(&e)?),
                (None, None) => bail!("one of --traces or --endpoint is required"),
            };
            let mode = match mode {
                ModeArg::Baseline => Mode::Baseline,
                ModeArg::Bs => Mode::Bs,
            };
            std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let (output, failure) = match bench::run_benchmark(&corpus, &input, mode, &cfg) {
                Ok(o) => (o, None),
                Err(BenchError::Toolchain { message, partial }) => (partial, Some(message)),
                Err(e) => return Err(e.into()),
            };
            bench::write_json(&out.join("reports.json"), &output.reports)?;
            let table = bench::reports_table(&output.reports);
            std::fs::write(out.join("reports.txt"), &table)?;
            if !output.transcripts.is_empty() {
                let mut w = TraceWriter::create(&out.join("transcripts.jsonl"))?;
                for t in &output.transcripts {
                    w.write(t)?;
                }
            }
            print!("{table}");
            if let Some(message) = failure {
                eprintln!(
                    "aborted: {message}; {} reports written to {}",
                    output.reports.len(),
                    out.display()
                );
                return Ok(ExitCode::from(2));
            }
            if let Ok(p) = codestop_core::metrics::pass_at_1(&output.reports) {
                println!("pass@1 = {}/{} = {:.3}", p.passed, p.total, p.value());
            }
        }
        Command::Compare { baseline, bs, out } => {
            let delta = compare_reports(&bench::read_reports(&baseline)?, &bench::read_reports(&bs)?)?;
            bench::write_json(&out, &delta)?;
            let table = bench::delta_table(&delta);
            std::fs::write(out.with_extension("txt"), &table)?;
            print!("{table}");
        }
        Command::AnalyzePositions {
            traces,
            reports,
            out,
            max_index,
            bin_width,
        } => {
            let analysis =
                bench::analyze_positions(&read_traces(&traces)?, &bench::read_reports(&reports)?, max_index, bin_width);
            bench::write_json(&out, &analysis)?;
            let (curve, hist) = bench::position_columns(&analysis);
            std::fs::write(out.with_extension("curve.tsv"), curve)?;
            std::fs::write(out.with_extension("hist.tsv"), hist)?;
            println!(
                "{} traces, {} passing, mean first index {:?}, mean last index {:?}",
                analysis.traces, analysis.passing, analysis.mean_first_index, analysis.mean_last_index
            );
        }
        Command::Energy { samples, reports, out } => {
            let samples = bench::read_power_log(&samples)?;
            let mut reports = bench::read_reports(&reports)?;
            for w in bench::fill_energy(&mut reports, &samples) {
                eprintln!("warning: {w}");
            }
            bench::write_json(&out, &reports)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
