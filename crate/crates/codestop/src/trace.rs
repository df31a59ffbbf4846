//! Recorded traces and the token-source abstraction.

use std::fs::File;
use std::io::{self, BufRead, BufReader, Write};
use std::path::Path;
use std::thread;
use std::time::{Duration, Instant};

use codestop_core::{Language, TokenEvent};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Terminal {
    /// The model emitted end-of-generation after the last token.
    Eos,
    /// Generation was cut off without an end-of-generation marker.
    Cap,
}

/// One generation session, one JSON object per line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TraceRecord {
    pub problem_id: String,
    pub model_id: String,
    pub language: Language,
    pub tokens: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps_ns: Option<Vec<u64>>,
    pub terminal: Terminal,
    pub temperature: f64,
    pub top_p: f64,
}

impl TraceRecord {
    pub fn validate(&self) -> Result<(), String> {
        if self.tokens.is_empty() && self.terminal != Terminal::Eos {
            return Err("empty token list without end-of-generation".into());
        }
        if let Some(ts) = &self.timestamps_ns {
            if ts.len() != self.tokens.len() {
                return Err(format!("{} timestamps for {} tokens", ts.len(), self.tokens.len()));
            }
            if ts.windows(2).any(|w| w[1] < w[0]) {
                return Err("timestamps decrease".into());
            }
        }
        Ok(())
    }

    pub fn text(&self) -> String {
        self.tokens.concat()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum TraceError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Record { path: String, line: usize, message: String },
    #[error("{path}: expected exactly one record, found {found}")]
    NotSingle { path: String, found: usize },
}

/// Reads every record of a line-delimited trace file. Blank lines are
/// skipped; errors carry the 1-based line number.
pub fn read_traces(path: &Path) -> Result<Vec<TraceRecord>, TraceError> {
    let shown = path.display().to_string();
    let io_err = |source| TraceError::Io {
        path: shown.clone(),
        source,
    };
    let reader = BufReader::new(File::open(path).map_err(io_err)?);
    let mut records = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err)?;
        if line.trim().is_empty() {
            continue;
        }
        let record_err = |message: String| TraceError::Record {
            path: shown.clone(),
            line: n + 1,
            message,
        };
        let record: TraceRecord = serde_json::from_str(&line).map_err(|e| record_err(e.to_string()))?;
        record.validate().map_err(record_err)?;
        records.push(record);
    }
    Ok(records)
}

/// Appends records to a line-delimited trace file.
pub struct TraceWriter<W: Write> {
    out: W,
}

impl TraceWriter<File> {
    pub fn create(path: &Path) -> io::Result<Self> {
        Ok(Self { out: File::create(path)? })
    }
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }

    pub fn write(&mut self, record: &TraceRecord) -> io::Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SourceError {
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("endpoint returned {status}: {body}")]
    Status { status: u16, body: String },
    #[error("stream interrupted: {0}")]
    Interrupted(String),
    #[error("malformed stream data: {0}")]
    Protocol(String),
}

/// Ordered token events for one session. `Ok(None)` means the source ended
/// without an end-of-generation event.
pub trait TokenSource {
    fn next_event(&mut self) -> Result<Option<TokenEvent>, SourceError>;

    /// Stops upstream generation; later calls to `next_event` return
    /// `Ok(None)`.
    fn cancel(&mut self) {}
}

impl<S: TokenSource + ?Sized> TokenSource for Box<S> {
    fn next_event(&mut self) -> Result<Option<TokenEvent>, SourceError> {
        (**self).next_event()
    }

    fn cancel(&mut self) {
        (**self).cancel()
    }
}

/// Replays a recorded trace.
pub struct ReplaySource {
    record: TraceRecord,
    next: usize,
    pacing: bool,
    started: Instant,
    done: bool,
}

impl ReplaySource {
    pub fn new(record: TraceRecord) -> Self {
        Self {
            record,
            next: 0,
            pacing: false,
            started: Instant::now(),
            done: false,
        }
    }

    /// Sleeps between events to reproduce the recorded arrival times.
    pub fn with_pacing(mut self, pacing: bool) -> Self {
        self.pacing = pacing;
        self
    }

    pub fn record(&self) -> &TraceRecord {
        &self.record
    }

    fn pace(&self, i: usize) {
        let Some(ts) = self.record.timestamps_ns.as_ref().filter(|_| self.pacing) else {
            return;
        };
        let Some(&t) = ts.get(i.min(ts.len().saturating_sub(1))) else {
            return;
        };
        let due = Duration::from_nanos(t - ts[0]);
        if let Some(wait) = due.checked_sub(self.started.elapsed()) {
            thread::sleep(wait);
        }
    }
}

impl TokenSource for ReplaySource {
    fn next_event(&mut self) -> Result<Option<TokenEvent>, SourceError> {
        if self.done {
            return Ok(None);
        }
        let i = self.next;
        self.pace(i);
        let now = self.started.elapsed().as_nanos() as u64;
        if let Some(text) = self.record.tokens.get(i) {
            self.next += 1;
            return Ok(Some(TokenEvent::text(i, text.clone(), now)));
        }
        self.done = true;
        Ok((self.record.terminal == Terminal::Eos).then(|| TokenEvent::eos(i, now)))
    }

    fn cancel(&mut self) {
        self.done = true;
    }
}

/// Opens a trace file holding a single record.
pub fn open_replay(path: &Path) -> Result<ReplaySource, TraceError> {
    let mut records = read_traces(path)?;
    if records.len() != 1 {
        return Err(TraceError::NotSingle {
            path: path.display().to_string(),
            found: records.len(),
        });
    }
    Ok(ReplaySource::new(records.remove(0)))
}

/// Wraps a source and keeps every delivered event, so a live session can
/// be written out as a trace and replayed later.
pub struct Recorder<S> {
    inner: S,
    tokens: Vec<String>,
    timestamps: Vec<u64>,
    saw_eos: bool,
}

impl<S: TokenSource> Recorder<S> {
    pub fn new(inner: S) -> Self {
        Self {
            inner,
            tokens: Vec::new(),
            timestamps: Vec::new(),
            saw_eos: false,
        }
    }

    pub fn inner(&self) -> &S {
        &self.inner
    }

    /// Trace of everything delivered so far. A session that stopped before
    /// end-of-generation is recorded with the `cap` terminal.
    pub fn trace(&self, problem_id: &str, model_id: &str, language: Language, temperature: f64, top_p: f64) -> TraceRecord {
        TraceRecord {
            problem_id: problem_id.into(),
            model_id: model_id.into(),
            language,
            tokens: self.tokens.clone(),
            timestamps_ns: Some(self.timestamps.clone()),
            terminal: if self.saw_eos { Terminal::Eos } else { Terminal::Cap },
            temperature,
            top_p,
        }
    }
}

impl<S: TokenSource> TokenSource for Recorder<S> {
    fn next_event(&mut self) -> Result<Option<TokenEvent>, SourceError> {
        let event = self.inner.next_event()?;
        if let Some(e) = &event {
            if e.is_eos {
                self.saw_eos = true;
            } else {
                self.tokens.push(e.text.clone());
                self.timestamps.push(e.arrival_time);
            }
        }
        Ok(event)
    }

    fn cancel(&mut self) {
        self.inner.cancel()
    }
}
