//! Live token source over a chat-completions streaming endpoint.

use std::io::{BufRead, BufReader, Read};
use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use codestop_core::TokenEvent;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::trace::{SourceError, TokenSource};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EndpointConfig {
    /// Base URL up to, not including, `/chat/completions`.
    pub base_url: String,
    pub model: String,
    pub max_tokens: usize,
    pub temperature: f64,
    pub top_p: f64,
    /// Environment variable holding the bearer token.
    pub auth_env: Option<String>,
    pub request_timeout_secs: f64,
    /// Events buffered between the reader thread and the session.
    pub buffer: usize,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: String::new(),
            max_tokens: 1000,
            temperature: 0.1,
            top_p: 0.95,
            auth_env: None,
            request_timeout_secs: 600.0,
            buffer: 1,
        }
    }
}

impl EndpointConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        use anyhow::Context;
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let config: Self = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        Ok(config)
    }

    /// `max_tokens` may not exceed the session cap.
    pub fn validate(&self, max_output_tokens: usize) -> Result<(), String> {
        if self.max_tokens > max_output_tokens {
            return Err(format!(
                "endpoint max_tokens {} exceeds max_output_tokens {max_output_tokens}",
                self.max_tokens
            ));
        }
        if self.buffer == 0 {
            return Err("buffer must be at least 1".into());
        }
        Ok(())
    }
}

enum Chunk {
    Text(String),
    Done,
    Failed(SourceError),
}

/// Token stream from a live endpoint. A background thread reads the
/// response; cancelling drops the connection.
pub struct StreamSource {
    rx: Option<Receiver<Chunk>>,
    cancelled: Arc<AtomicBool>,
    reader: Option<JoinHandle<()>>,
    next: usize,
    started: Instant,
    finished: bool,
}

/// Starts a streaming completion for `prompt`.
pub fn open_stream(endpoint: &EndpointConfig, prompt: &str) -> Result<StreamSource, SourceError> {
    if prompt.trim().is_empty() {
        return Err(SourceError::Connect("empty prompt".into()));
    }
    let token = match &endpoint.auth_env {
        Some(var) => Some(
            std::env::var(var).map_err(|_| SourceError::Connect(format!("environment variable {var} is not set")))?,
        ),
        None => None,
    };
    let body = serde_json::json!({
        "model": endpoint.model,
        "messages": [{"role": "user", "content": prompt}],
        "stream": true,
        "max_tokens": endpoint.max_tokens,
        "temperature": endpoint.temperature,
        "top_p": endpoint.top_p,
    });
    let url = format!("{}/chat/completions", endpoint.base_url.trim_end_matches('/'));
    let timeout = Duration::from_secs_f64(endpoint.request_timeout_secs.max(0.001));
    let (tx, rx) = sync_channel(endpoint.buffer.max(1));
    let cancelled = Arc::new(AtomicBool::new(false));
    let flag = cancelled.clone();
    let reader = thread::Builder::new()
        .name("codestop-stream".into())
        .spawn(move || read_stream(&url, token.as_deref(), &body, timeout, &tx, &flag))
        .map_err(|e| SourceError::Connect(e.to_string()))?;
    Ok(StreamSource {
        rx: Some(rx),
        cancelled,
        reader: Some(reader),
        next: 0,
        started: Instant::now(),
        finished: false,
    })
}

fn read_stream(
    url: &str,
    token: Option<&str>,
    body: &Value,
    timeout: Duration,
    tx: &SyncSender<Chunk>,
    cancelled: &AtomicBool,
) {
    let send = |c: Chunk| tx.send(c).is_ok() && !cancelled.load(Ordering::Acquire);
    let client = match reqwest::blocking::Client::builder().timeout(timeout).build() {
        Ok(c) => c,
        Err(e) => {
            send(Chunk::Failed(SourceError::Connect(e.to_string())));
            return;
        }
    };
    let mut request = client.post(url).json(body).header("Accept", "text/event-stream");
    if let Some(t) = token {
        request = request.bearer_auth(t);
    }
    let response = match request.send() {
        Ok(r) => r,
        Err(e) => {
            send(Chunk::Failed(SourceError::Connect(e.to_string())));
            return;
        }
    };
    let status = response.status();
    if !status.is_success() {
        let mut excerpt = String::new();
        let _ = response.take(512).read_to_string(&mut excerpt);
        send(Chunk::Failed(SourceError::Status {
            status: status.as_u16(),
            body: excerpt.trim().to_string(),
        }));
        return;
    }
    for line in BufReader::new(response).lines() {
        if cancelled.load(Ordering::Acquire) {
            return;
        }
        let line = match line {
            Ok(l) => l,
            Err(e) => {
                send(Chunk::Failed(SourceError::Interrupted(e.to_string())));
                return;
            }
        };
        let Some(data) = line.strip_prefix("data:").map(str::trim) else {
            continue;
        };
        if data == "[DONE]" {
            send(Chunk::Done);
            return;
        }
        match parse_delta(data) {
            Ok((text, finished)) => {
                if !text.is_empty() && !send(Chunk::Text(text)) {
                    return;
                }
                if finished {
                    send(Chunk::Done);
                    return;
                }
            }
            Err(e) => {
                send(Chunk::Failed(e));
                return;
            }
        }
    }
    // Body ended without a terminator.
    send(Chunk::Failed(SourceError::Interrupted("stream closed before completion".into())));
}

/// Text delta and whether the choice finished.
fn parse_delta(data: &str) -> Result<(String, bool), SourceError> {
    let v: Value = serde_json::from_str(data).map_err(|e| SourceError::Protocol(format!("{e}: {data}")))?;
    if let Some(err) = v.get("error") {
        return Err(SourceError::Protocol(err.to_string()));
    }
    let choice = &v["choices"][0];
    let text = choice["delta"]["content"]
        .as_str()
        .or_else(|| choice["text"].as_str())
        .unwrap_or("")
        .to_string();
    Ok((text, !choice["finish_reason"].is_null()))
}

impl TokenSource for StreamSource {
    fn next_event(&mut self) -> Result<Option<TokenEvent>, SourceError> {
        if self.finished {
            return Ok(None);
        }
        let Some(rx) = self.rx.as_ref() else {
            return Ok(None);
        };
        let chunk = rx.recv().unwrap_or_else(|_| {
            Chunk::Failed(SourceError::Interrupted("reader stopped unexpectedly".into()))
        });
        let now = self.started.elapsed().as_nanos() as u64;
        match chunk {
            Chunk::Text(text) => {
                let i = self.next;
                self.next += 1;
                Ok(Some(TokenEvent::text(i, text, now)))
            }
            Chunk::Done => {
                self.finished = true;
                Ok(Some(TokenEvent::eos(self.next, now)))
            }
            Chunk::Failed(e) => {
                self.finished = true;
                Err(e)
            }
        }
    }

    fn cancel(&mut self) {
        self.finished = true;
        self.cancelled.store(true, Ordering::Release);
        // Unblocks a reader waiting on a full buffer; it then returns and
        // drops the response, closing the connection.
        self.rx = None;
    }
}

impl Drop for StreamSource {
    fn drop(&mut self) {
        self.cancel();
        if let Some(h) = self.reader.take() {
            // A reader blocked inside a socket read exits once the read
            // returns; never hold up the session for it.
            if h.is_finished() {
                let _ = h.join();
            }
        }
    }
}
