//! Process-backed toolchains, token sources and the benchmark harness for
//! `codestop-core`.

pub mod backend;
pub mod bench;
pub mod bundle;
pub mod config;
pub mod endpoint;
pub mod run;
pub mod sandbox;
pub mod toolchain;
pub mod trace;

pub use backend::{ProcessBackend, TimeoutMode};
pub use bundle::ProblemBundle;
pub use config::SuppressionConfig;
pub use run::{run_baseline, run_session, BaselineResult, SessionResult, Terminal};
pub use toolchain::{classify_diagnostic, Toolchain};
pub use trace::{open_replay, read_traces, ReplaySource, TokenSource, TraceRecord};
