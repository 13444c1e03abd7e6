//! Model-inference clients.
//!
//! Every model call goes through [`ChatBackend`]: a chat-completion request
//! with text and image parts in, assistant text out. Implementations:
//!
//! * [`HttpChatClient`]: chat-completion JSON over HTTP, with retry, pacing and
//!   an in-flight cap taken from a [`BackendProfile`].
//! * [`MockBackend`]: canned responses keyed by request hash. Also reads audit
//!   directories, which is how `--replay` works.
//! * [`FnBackend`]: a closure, for tests and fixture generation.
//!
//! [`Audited`] wraps any backend and writes one JSON file per request.

use std::path::PathBuf;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

mod audit;
mod http;
mod mock;
mod scores;
mod throttle;

pub use audit::{AuditLog, AuditRecord, Audited};
pub use http::{with_retry, HttpChatClient};
pub use mock::{FnBackend, MockBackend};
pub use scores::{fetch_scores, parse_score_tsv, ScoreSource};
pub use throttle::{Permit, Throttle, Throttled};

/// Environment variable overriding the profile endpoint.
pub const ENV_BACKEND_URL: &str = "T2V_BACKEND_URL";
/// Environment variable holding the bearer token.
pub const ENV_BACKEND_KEY: &str = "T2V_BACKEND_KEY";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("HTTP {status}: {body}")]
    Http { status: u16, body: String },
    #[error("rate limited; gave up after {attempts} attempts")]
    RateLimited { attempts: u32 },
    #[error("capability violation: {0}")]
    Capability(String),
    #[error("no fixture for request {hash} ({preview})")]
    MissingFixture { hash: String, preview: String },
    #[error("invalid response: {0}")]
    InvalidResponse(String),
    #[error("scores missing for: {}", .0.join(", "))]
    MissingScores(Vec<String>),
    #[error("non-finite score for {0:?}")]
    NonFiniteScore(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("configuration: {0}")]
    Config(String),
}

impl BackendError {
    /// Whether a retry could plausibly succeed.
    pub fn is_transient(&self) -> bool {
        match self {
            BackendError::Transport(_) => true,
            BackendError::Http { status, .. } => *status == 429 || *status >= 500,
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ContentPart {
    Text(String),
    /// Encoded image bytes with their media type.
    Image {
        media_type: String,
        data: Vec<u8>,
    },
}

impl ContentPart {
    pub fn png(data: Vec<u8>) -> Self {
        ContentPart::Image {
            media_type: "image/png".into(),
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatMessage {
    pub role: Role,
    pub parts: Vec<ContentPart>,
}

impl ChatMessage {
    pub fn text(role: Role, text: impl Into<String>) -> Self {
        Self {
            role,
            parts: vec![ContentPart::Text(text.into())],
        }
    }

    pub fn text_content(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text(t) => Some(t.as_str()),
                ContentPart::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    pub max_tokens: u32,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            model_id: model_id.into(),
            messages,
            temperature: 0.0,
            max_tokens: 1024,
        }
    }

    pub fn image_count(&self) -> usize {
        self.messages
            .iter()
            .flat_map(|m| &m.parts)
            .filter(|p| matches!(p, ContentPart::Image { .. }))
            .count()
    }

    /// Text of the last user message.
    pub fn last_user_text(&self) -> String {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(ChatMessage::text_content)
            .unwrap_or_default()
    }

    /// Local structural and capability checks; no network involved.
    pub fn check(&self, caps: Capabilities) -> Result<(), BackendError> {
        if !self.messages.iter().any(|m| m.role == Role::User) {
            return Err(BackendError::Capability("request has no user message".into()));
        }
        let images = self.image_count();
        if images > 0 && !caps.image && !caps.video {
            return Err(BackendError::Capability(format!(
                "{images} image part(s) sent to a text-only backend"
            )));
        }
        Ok(())
    }

    /// Chat-completion wire body. Images are inlined as base64 data URLs.
    pub fn to_wire(&self) -> Value {
        self.render(|media_type, data| {
            let b64 = base64::engine::general_purpose::STANDARD.encode(data);
            json!({"type": "image_url", "image_url": {"url": format!("data:{media_type};base64,{b64}")}})
        })
    }

    /// Wire body with each image replaced by its SHA-256; used for hashing and
    /// audit files.
    pub fn to_digest_form(&self) -> Value {
        self.render(
            |media_type, data| json!({"type": "image_digest", "media_type": media_type, "sha256": sha256_hex(data)}),
        )
    }

    fn render(&self, image: impl Fn(&str, &[u8]) -> Value) -> Value {
        let messages: Vec<Value> = self
            .messages
            .iter()
            .map(|m| {
                let content: Vec<Value> = m
                    .parts
                    .iter()
                    .map(|p| match p {
                        ContentPart::Text(t) => json!({"type": "text", "text": t}),
                        ContentPart::Image { media_type, data } => image(media_type, data),
                    })
                    .collect();
                json!({"role": m.role, "content": content})
            })
            .collect();
        json!({
            "model": self.model_id,
            "messages": messages,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        })
    }

    /// Stable content hash; fixture and audit key.
    pub fn hash(&self) -> String {
        sha256_hex(self.to_digest_form().to_string().as_bytes())
    }
}

pub fn sha256_hex(data: &[u8]) -> String {
    hex::encode(Sha256::digest(data))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Capabilities {
    pub text: bool,
    pub image: bool,
    pub video: bool,
}

impl Capabilities {
    pub const ALL: Capabilities = Capabilities {
        text: true,
        image: true,
        video: true,
    };
    pub const TEXT_ONLY: Capabilities = Capabilities {
        text: true,
        image: false,
        video: false,
    };
}

impl Default for Capabilities {
    fn default() -> Self {
        Self::TEXT_ONLY
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateLimits {
    pub max_in_flight: usize,
    /// `None` disables pacing.
    pub requests_per_minute: Option<f64>,
}

impl Default for RateLimits {
    fn default() -> Self {
        Self {
            max_in_flight: 4,
            requests_per_minute: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_base_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 4,
            backoff_base_ms: 500,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `attempt` (1-based): base * 2^(attempt-1).
    pub fn backoff(&self, attempt: u32) -> std::time::Duration {
        let factor = 1u64 << (attempt.saturating_sub(1)).min(16);
        std::time::Duration::from_millis(self.backoff_base_ms.saturating_mul(factor))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendProfile {
    pub endpoint: String,
    pub model_id: String,
    #[serde(default)]
    pub capabilities: Capabilities,
    #[serde(default)]
    pub limits: RateLimits,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
}

fn default_timeout() -> u64 {
    120
}

impl BackendProfile {
    pub fn validate(&self) -> Result<(), BackendError> {
        if self.limits.max_in_flight < 1 {
            return Err(BackendError::Config("max_in_flight must be at least 1".into()));
        }
        if self.retry.max_attempts < 1 {
            return Err(BackendError::Config("max_attempts must be at least 1".into()));
        }
        if let Some(r) = self.limits.requests_per_minute {
            if r.is_nan() || r <= 0.0 {
                return Err(BackendError::Config("requests_per_minute must be positive".into()));
            }
        }
        Ok(())
    }

    /// Reads a JSON profile; `T2V_BACKEND_URL` overrides the endpoint.
    pub fn load(path: &std::path::Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path).map_err(|source| BackendError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut p: BackendProfile =
            serde_json::from_str(&text).map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        if let Ok(url) = std::env::var(ENV_BACKEND_URL) {
            p.endpoint = url;
        }
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
}

/// Assistant text plus transport metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    pub text: String,
    pub attempts: u32,
    pub usage: Option<Usage>,
}

impl Completion {
    pub fn text(text: impl Into<String>) -> Self {
        Self {
            text: text.into(),
            attempts: 1,
            usage: None,
        }
    }
}

/// A chat-completion service.
pub trait ChatBackend: Send + Sync {
    fn capabilities(&self) -> Capabilities;

    /// Model identifier placed in requests built for this backend.
    fn model_id(&self) -> &str;

    /// Performs the call without local checks.
    fn send(&self, req: &ChatRequest) -> Result<Completion, BackendError>;

    /// Checks the request against [`ChatBackend::capabilities`], then sends it.
    fn complete(&self, req: &ChatRequest) -> Result<Completion, BackendError> {
        req.check(self.capabilities())?;
        self.send(req)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for std::sync::Arc<B> {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn send(&self, req: &ChatRequest) -> Result<Completion, BackendError> {
        (**self).send(req)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn capabilities(&self) -> Capabilities {
        (**self).capabilities()
    }
    fn model_id(&self) -> &str {
        (**self).model_id()
    }
    fn send(&self, req: &ChatRequest) -> Result<Completion, BackendError> {
        (**self).send(req)
    }
}
