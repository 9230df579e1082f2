//! Deterministic backend driven by a fixture of request fingerprints.
//!
//! Fixture file (JSON):
//!
//! ```json
//! {
//!   "responses": {
//!     "<fingerprint>": { "text": "RELEVANCE: 7.0\nEVIDENCE: x" },
//!     "<fingerprint>": { "text": "ok", "fail_first": 2 },
//!     "<fingerprint>": { "text": "", "always_fail": true }
//!   },
//!   "synthetic": { "seed": 7, "fail_rate": 0.0 },
//!   "delay_ms": 0
//! }
//! ```
//!
//! Requests whose fingerprint has no entry are answered by the synthetic
//! responder when `synthetic` is present, and fail with
//! [`BackendError::Unscripted`] otherwise. The synthetic responder derives
//! everything from the fingerprint, so it is deterministic.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest, ChatResponse, FinishReason};
use crate::prompts::{EXTRACTION_FORMAT_MARKER, SOURCE_PAGE_MARKER};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub text: String,
    #[serde(default)]
    pub finish_reason: FinishReason,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u32>,
    /// Fail this many times before answering.
    #[serde(default)]
    pub fail_first: u32,
    #[serde(default)]
    pub always_fail: bool,
    /// Status code reported for scripted failures.
    #[serde(default = "default_fail_status")]
    pub fail_status: u16,
}

fn default_fail_status() -> u16 {
    503
}

impl ScriptEntry {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            finish_reason: FinishReason::Stop,
            completion_tokens: None,
            fail_first: 0,
            always_fail: false,
            fail_status: default_fail_status(),
        }
    }

    pub fn failing() -> Self {
        Self { always_fail: true, ..Self::text("") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    #[serde(default)]
    pub seed: u64,
    /// Fraction of distinct requests that always fail.
    #[serde(default)]
    pub fail_rate: f64,
    /// Fraction of non-source pages the extractor treats as irrelevant.
    #[serde(default = "default_irrelevant_rate")]
    pub irrelevant_rate: f64,
}

fn default_irrelevant_rate() -> f64 {
    0.6
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { seed: 0, fail_rate: 0.0, irrelevant_rate: default_irrelevant_rate() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ScriptFixture {
    #[serde(default)]
    pub responses: BTreeMap<String, ScriptEntry>,
    #[serde(default)]
    pub synthetic: Option<SyntheticConfig>,
    #[serde(default)]
    pub delay_ms: u64,
}

/// Start and end of one `send` call, relative to backend creation.
#[derive(Debug, Clone, PartialEq)]
pub struct CallRecord {
    pub fingerprint: String,
    pub start: Duration,
    pub end: Duration,
}

pub struct ScriptedBackend {
    fixture: ScriptFixture,
    created: Instant,
    attempts: Mutex<HashMap<String, u32>>,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    calls: Mutex<Vec<CallRecord>>,
    record_requests: bool,
    requests: Mutex<Vec<ChatRequest>>,
}

impl ScriptedBackend {
    pub fn new(fixture: ScriptFixture) -> Self {
        Self {
            fixture,
            created: Instant::now(),
            attempts: Mutex::new(HashMap::new()),
            in_flight: AtomicUsize::new(0),
            max_in_flight: AtomicUsize::new(0),
            calls: Mutex::new(Vec::new()),
            record_requests: false,
            requests: Mutex::new(Vec::new()),
        }
    }

    /// Backend that answers everything synthetically.
    pub fn synthetic(config: SyntheticConfig) -> Self {
        Self::new(ScriptFixture { synthetic: Some(config), ..ScriptFixture::default() })
    }

    pub fn from_fixture_file(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let fixture: ScriptFixture = serde_json::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
        Ok(Self::new(fixture))
    }

    pub fn with_entry(mut self, fingerprint: impl Into<String>, entry: ScriptEntry) -> Self {
        self.fixture.responses.insert(fingerprint.into(), entry);
        self
    }

    pub fn with_delay(mut self, delay: Duration) -> Self {
        self.fixture.delay_ms = delay.as_millis() as u64;
        self
    }

    /// Keep a copy of every request sent.
    pub fn recording(mut self) -> Self {
        self.record_requests = true;
        self
    }

    /// Highest number of concurrent `send` calls observed.
    pub fn max_in_flight(&self) -> usize {
        self.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn calls(&self) -> Vec<CallRecord> {
        self.calls.lock().unwrap().clone()
    }

    pub fn recorded_requests(&self) -> Vec<ChatRequest> {
        self.requests.lock().unwrap().clone()
    }

    fn respond(&self, fingerprint: &str, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        if let Some(entry) = self.fixture.responses.get(fingerprint) {
            let attempt = {
                let mut attempts = self.attempts.lock().unwrap();
                let n = attempts.entry(fingerprint.to_string()).or_insert(0);
                *n += 1;
                *n
            };
            if entry.always_fail || attempt <= entry.fail_first {
                return Err(BackendError::Status {
                    status: entry.fail_status,
                    body: format!("scripted failure for {fingerprint}"),
                });
            }
            return Ok(finish(entry.text.clone(), entry.finish_reason, entry.completion_tokens, request));
        }
        match &self.fixture.synthetic {
            Some(cfg) => synthetic_response(cfg, fingerprint, request),
            None => Err(BackendError::Unscripted(fingerprint.to_string())),
        }
    }
}

fn finish(text: String, reason: FinishReason, tokens: Option<u32>, request: &ChatRequest) -> ChatResponse {
    let completion_tokens = match reason {
        FinishReason::Length => request.max_tokens(),
        _ => tokens.unwrap_or_else(|| text.split_whitespace().count() as u32),
    };
    ChatResponse { text, completion_tokens, finish_reason: reason }
}

/// Uniform value in [0, 1) derived from a fingerprint, seed and salt.
fn unit(fingerprint: &str, seed: u64, salt: u64) -> f64 {
    let head = u64::from_str_radix(&fingerprint[..16.min(fingerprint.len())], 16).unwrap_or(0);
    let bits = crate::rng::derive_seed(seed, &[head, salt]);
    (bits >> 11) as f64 / (1u64 << 53) as f64
}

fn synthetic_response(
    cfg: &SyntheticConfig,
    fingerprint: &str,
    request: &ChatRequest,
) -> Result<ChatResponse, BackendError> {
    if unit(fingerprint, cfg.seed, 0) < cfg.fail_rate {
        return Err(BackendError::Scripted(fingerprint.to_string()));
    }
    let tag = &fingerprint[..16.min(fingerprint.len())];
    let text = if request.contains_text(EXTRACTION_FORMAT_MARKER) {
        let u = unit(fingerprint, cfg.seed, 1);
        let score = if request.contains_text(SOURCE_PAGE_MARKER) {
            6.0 + 4.0 * u
        } else if unit(fingerprint, cfg.seed, 2) < cfg.irrelevant_rate {
            0.9 * u
        } else {
            1.0 + 9.0 * u
        };
        let score = (score * 10.0).round() / 10.0;
        if score < 1.0 {
            format!("RELEVANCE: {score:.1}\nEVIDENCE: ")
        } else {
            format!("RELEVANCE: {score:.1}\nEVIDENCE: Evidence {tag} relevant to the question.")
        }
    } else {
        format!("Synthetic response {tag}.")
    };
    Ok(finish(text, FinishReason::Stop, None, request))
}

impl ChatBackend for ScriptedBackend {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let now = self.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
        self.max_in_flight.fetch_max(now, Ordering::SeqCst);
        let start = self.created.elapsed();

        let fingerprint = request.fingerprint().map_err(|e| BackendError::Io(e.to_string()));
        if self.fixture.delay_ms > 0 {
            std::thread::sleep(Duration::from_millis(self.fixture.delay_ms));
        }
        let result = fingerprint.and_then(|fp| {
            let r = self.respond(&fp, request);
            self.calls.lock().unwrap().push(CallRecord {
                fingerprint: fp,
                start,
                end: self.created.elapsed(),
            });
            r
        });
        if self.record_requests {
            self.requests.lock().unwrap().push(request.clone());
        }

        self.in_flight.fetch_sub(1, Ordering::SeqCst);
        result
    }
}
