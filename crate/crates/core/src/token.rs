use alloc::string::String;

use serde::{Deserialize, Serialize};

/// One decoded text fragment at position `index` of a generated sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenEvent {
    pub index: usize,
    pub text: String,
    pub is_eos: bool,
    /// Monotonic arrival timestamp in nanoseconds.
    pub arrival_time: u64,
}

impl TokenEvent {
    pub fn text(index: usize, text: impl Into<String>, arrival_time: u64) -> Self {
        Self {
            index,
            text: text.into(),
            is_eos: false,
            arrival_time,
        }
    }

    /// End-of-generation marker. Carries no text.
    pub fn eos(index: usize, arrival_time: u64) -> Self {
        Self {
            index,
            text: String::new(),
            is_eos: true,
            arrival_time,
        }
    }
}
