//! Chat-completion backends.
//!
//! A [`ChatBackend`] performs one attempt at a request. [`complete`] wraps it
//! with retries and backoff, and [`complete_batch`] fans a list of requests out
//! over a bounded number of worker threads while keeping input order.

mod batch;
mod http;
mod scripted;

use std::fmt;
use std::time::Duration;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::document::PageImage;

pub use batch::complete_batch;
pub use http::{HttpBackend, HttpConfig};
pub use scripted::{CallRecord, ScriptEntry, ScriptFixture, ScriptedBackend, SyntheticConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Part {
    Text(String),
    Image(PageImage),
}

#[derive(Debug, Error, PartialEq)]
pub enum MessageError {
    #[error("message has no parts")]
    Empty,
    #[error("image parts are only allowed in user messages")]
    ImageOutsideUser,
    #[error("request has no messages")]
    NoMessages,
    #[error("max_tokens must be positive")]
    ZeroMaxTokens,
    #[error("temperature must be finite and non-negative")]
    BadTemperature,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatMessage {
    role: Role,
    parts: Vec<Part>,
}

impl ChatMessage {
    pub fn new(role: Role, parts: Vec<Part>) -> Result<Self, MessageError> {
        if parts.is_empty() {
            return Err(MessageError::Empty);
        }
        if role != Role::User && parts.iter().any(|p| matches!(p, Part::Image(_))) {
            return Err(MessageError::ImageOutsideUser);
        }
        Ok(Self { role, parts })
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self { role: Role::System, parts: vec![Part::Text(text.into())] }
    }

    /// User message from parts. Panics if `parts` is empty.
    pub fn user(parts: Vec<Part>) -> Self {
        assert!(!parts.is_empty(), "user message needs at least one part");
        Self { role: Role::User, parts }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn parts(&self) -> &[Part] {
        &self.parts
    }

    /// All text parts joined by newlines.
    pub fn text(&self) -> String {
        let texts: Vec<&str> = self
            .parts
            .iter()
            .filter_map(|p| match p {
                Part::Text(t) => Some(t.as_str()),
                Part::Image(_) => None,
            })
            .collect();
        texts.join("\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    model_id: String,
    messages: Vec<ChatMessage>,
    max_tokens: u32,
    temperature: f64,
}

impl ChatRequest {
    pub fn new(
        model_id: impl Into<String>,
        messages: Vec<ChatMessage>,
        max_tokens: u32,
        temperature: f64,
    ) -> Result<Self, MessageError> {
        if messages.is_empty() {
            return Err(MessageError::NoMessages);
        }
        if max_tokens == 0 {
            return Err(MessageError::ZeroMaxTokens);
        }
        if !temperature.is_finite() || temperature < 0.0 {
            return Err(MessageError::BadTemperature);
        }
        Ok(Self { model_id: model_id.into(), messages, max_tokens, temperature })
    }

    pub fn model_id(&self) -> &str {
        &self.model_id
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn max_tokens(&self) -> u32 {
        self.max_tokens
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn parts(&self) -> impl Iterator<Item = &Part> {
        self.messages.iter().flat_map(|m| m.parts.iter())
    }

    pub fn images(&self) -> impl Iterator<Item = &PageImage> {
        self.parts().filter_map(|p| match p {
            Part::Image(img) => Some(img),
            Part::Text(_) => None,
        })
    }

    pub fn image_count(&self) -> usize {
        self.images().count()
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.parts().filter_map(|p| match p {
            Part::Text(t) => Some(t.as_str()),
            Part::Image(_) => None,
        })
    }

    /// True if any text part contains `needle`.
    pub fn contains_text(&self, needle: &str) -> bool {
        self.texts().any(|t| t.contains(needle))
    }

    /// Stable hex digest of the model id and message contents. Images are
    /// hashed by content, so the fingerprint does not depend on where the
    /// document lives on disk. Sampling parameters are not included.
    pub fn fingerprint(&self) -> std::io::Result<String> {
        let mut hasher = Sha256::new();
        let mut field = |tag: &[u8], bytes: &[u8]| {
            hasher.update(tag);
            hasher.update((bytes.len() as u64).to_le_bytes());
            hasher.update(bytes);
        };
        field(b"model", self.model_id.as_bytes());
        for msg in &self.messages {
            field(b"role", msg.role.as_str().as_bytes());
            for part in &msg.parts {
                match part {
                    Part::Text(t) => field(b"text", t.as_bytes()),
                    Part::Image(img) => {
                        let digest = Sha256::digest(img.read_bytes()?);
                        field(b"image", &digest);
                    }
                }
            }
        }
        Ok(hex::encode(hasher.finalize()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum FinishReason {
    #[default]
    Stop,
    Length,
    Error,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatResponse {
    pub text: String,
    pub completion_tokens: u32,
    pub finish_reason: FinishReason,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("HTTP status {status}: {body}")]
    Status { status: u16, body: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("malformed response: {0}")]
    Malformed(String),
    #[error("scripted failure for {0}")]
    Scripted(String),
    #[error("no scripted response for fingerprint {0}")]
    Unscripted(String),
    #[error("reading request image: {0}")]
    Io(String),
}

impl BackendError {
    /// Whether another attempt could succeed. Status errors are retried
    /// regardless of code; payload, fixture and local I/O errors are not.
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Status { .. } | BackendError::Transport(_) | BackendError::Scripted(_))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompletionError {
    #[error("gave up after {attempts} attempt(s): {last}")]
    ExhaustedRetries { attempts: u32, last: BackendError },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
}

/// One attempt at a chat completion. Implementations must be safe to call
/// from several threads at once.
pub trait ChatBackend: Send + Sync {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).send(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for Box<B> {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).send(request)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        (**self).send(request)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub base_backoff: Duration,
    pub max_backoff: Duration,
    pub max_parallel: usize,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            base_backoff: Duration::from_millis(500),
            max_backoff: Duration::from_secs(60),
            max_parallel: 8,
        }
    }
}

impl RetryPolicy {
    /// Policy with no waiting between attempts, for scripted backends.
    pub fn immediate(max_attempts: u32, max_parallel: usize) -> Self {
        Self {
            max_attempts,
            base_backoff: Duration::ZERO,
            max_backoff: Duration::ZERO,
            max_parallel,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_attempts == 0 {
            return Err("max_attempts must be at least 1".into());
        }
        if self.max_parallel == 0 {
            return Err("max_parallel must be at least 1".into());
        }
        Ok(())
    }

    /// Full-jitter exponential backoff before attempt `attempt + 1`:
    /// uniform in `[0, min(max_backoff, base * 2^attempt)]`.
    pub fn backoff(&self, attempt: u32, rng: &mut impl Rng) -> Duration {
        let cap = self
            .base_backoff
            .saturating_mul(1u32.checked_shl(attempt.min(31)).unwrap_or(u32::MAX))
            .min(self.max_backoff);
        if cap.is_zero() {
            return Duration::ZERO;
        }
        Duration::from_secs_f64(rng.random_range(0.0..=cap.as_secs_f64()))
    }
}

impl fmt::Display for RetryPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} attempts, backoff {:?}..{:?}, {} in flight",
            self.max_attempts, self.base_backoff, self.max_backoff, self.max_parallel
        )
    }
}

/// Sends `request`, retrying retryable failures up to `policy.max_attempts`.
pub fn complete<B: ChatBackend + ?Sized>(
    backend: &B,
    request: &ChatRequest,
    policy: &RetryPolicy,
) -> Result<ChatResponse, CompletionError> {
    let max_attempts = policy.max_attempts.max(1);
    let mut rng = rand::rng();
    let mut attempt = 0;
    loop {
        attempt += 1;
        match backend.send(request) {
            Ok(resp) => return Ok(resp),
            Err(BackendError::Malformed(msg)) => return Err(CompletionError::MalformedResponse(msg)),
            Err(err) if err.is_retryable() && attempt < max_attempts => {
                tracing::debug!(attempt, error = %err, "retrying chat completion");
                let wait = policy.backoff(attempt - 1, &mut rng);
                if !wait.is_zero() {
                    std::thread::sleep(wait);
                }
            }
            Err(last) => return Err(CompletionError::ExhaustedRetries { attempts: attempt, last }),
        }
    }
}
