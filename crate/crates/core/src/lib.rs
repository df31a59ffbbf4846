//! Engine for stopping streaming code generation as soon as a generated
//! function passes its test suite.
//!
//! The crate is `no_std` (it needs `alloc`). Anything that touches a
//! toolchain, a clock or a file goes through the [`Backend`] trait, which the
//! `codestop` crate implements with child processes.
//!
//! Pipeline per trigger point:
//!
//! 1. form checking units from the accumulated text ([`detect`]),
//! 2. skip units in the [`DiscardSet`], check the rest for well-formedness
//!    and discard fatally malformed ones ([`verdict`]),
//! 3. assemble a harness from the viable units and run the tests
//!    ([`harness`]); a passing harness stops the session ([`session`]).
#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod config;
pub mod detect;
pub mod harness;
pub mod lang;
pub mod metrics;
pub mod session;
pub mod token;
pub mod verdict;

pub use config::{SessionConfig, TriggerPolicy};
pub use detect::{detect_complete_units, extract_preamble, strip_fences, CheckingUnit, Detection, OpenUnit};
pub use harness::{assemble_harness, Harness, HarnessError, TestOutcome, TestStatus, TestSuite};
pub use lang::Language;
pub use session::{Backend, BackendError, Counters, Session, SessionError, SessionState, StopDecision};
pub use token::TokenEvent;
pub use verdict::{should_discard, Diagnostic, DiagnosticCategory, DiscardSet, Verdict};
