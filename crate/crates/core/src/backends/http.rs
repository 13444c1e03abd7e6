use std::sync::Once;
use std::time::Duration;

use serde_json::Value;

use super::{
    BackendError, BackendProfile, Capabilities, ChatBackend, ChatRequest, Completion, RetryPolicy, Throttle, Usage,
    ENV_BACKEND_KEY,
};

/// Runs `call` until it succeeds, fails permanently, or the policy's attempt
/// budget is spent. Returns the value and the number of attempts used.
pub fn with_retry<T, F>(policy: RetryPolicy, mut call: F) -> Result<(T, u32), BackendError>
where
    F: FnMut(u32) -> Result<T, BackendError>,
{
    let mut attempt = 1;
    loop {
        match call(attempt) {
            Ok(v) => return Ok((v, attempt)),
            Err(e) if e.is_transient() && attempt < policy.max_attempts => {
                let delay = policy.backoff(attempt);
                log::warn!("attempt {attempt} failed ({e}); retrying in {delay:?}");
                std::thread::sleep(delay);
                attempt += 1;
            }
            Err(BackendError::Http { status: 429, .. }) => return Err(BackendError::RateLimited { attempts: attempt }),
            Err(e) => return Err(e),
        }
    }
}

static CRYPTO: Once = Once::new();

pub(crate) fn install_crypto_provider() {
    CRYPTO.call_once(|| {
        // another component may already have installed one
        let _ = rustls::crypto::ring::default_provider().install_default();
    });
}

/// Chat-completion client for OpenAI-compatible endpoints.
pub struct HttpChatClient {
    profile: BackendProfile,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
    throttle: Throttle,
}

impl HttpChatClient {
    /// Builds a client; the bearer token comes from `T2V_BACKEND_KEY` when set.
    pub fn new(profile: BackendProfile) -> Result<Self, BackendError> {
        let key = std::env::var(ENV_BACKEND_KEY).ok();
        Self::with_key(profile, key)
    }

    pub fn with_key(profile: BackendProfile, api_key: Option<String>) -> Result<Self, BackendError> {
        profile.validate()?;
        install_crypto_provider();
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(profile.timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(e.to_string()))?;
        Ok(Self {
            throttle: Throttle::new(profile.limits),
            profile,
            api_key,
            http,
        })
    }

    pub fn profile(&self) -> &BackendProfile {
        &self.profile
    }

    fn post_once(&self, body: &Value) -> Result<(String, Option<Usage>), BackendError> {
        let mut rb = self.http.post(&self.profile.endpoint).json(body);
        if let Some(key) = &self.api_key {
            rb = rb.bearer_auth(key);
        }
        let resp = rb.send().map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| BackendError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(BackendError::Http {
                status: status.as_u16(),
                body: text.chars().take(500).collect(),
            });
        }
        parse_chat_response(&text)
    }
}

/// Extracts `choices[0].message.content` and the usage block.
pub(crate) fn parse_chat_response(text: &str) -> Result<(String, Option<Usage>), BackendError> {
    let v: Value = serde_json::from_str(text).map_err(|e| BackendError::InvalidResponse(format!("not JSON: {e}")))?;
    let content = &v["choices"][0]["message"]["content"];
    let text = match content {
        Value::String(s) => s.clone(),
        // some servers return content as a list of text parts
        Value::Array(parts) => parts
            .iter()
            .filter_map(|p| p["text"].as_str())
            .collect::<Vec<_>>()
            .join(""),
        _ => {
            return Err(BackendError::InvalidResponse(
                "missing choices[0].message.content".into(),
            ))
        }
    };
    let usage = v.get("usage").and_then(|u| {
        Some(Usage {
            prompt_tokens: u.get("prompt_tokens")?.as_u64()?,
            completion_tokens: u.get("completion_tokens")?.as_u64()?,
        })
    });
    Ok((text, usage))
}

impl ChatBackend for HttpChatClient {
    fn capabilities(&self) -> Capabilities {
        self.profile.capabilities
    }

    fn model_id(&self) -> &str {
        &self.profile.model_id
    }

    fn send(&self, req: &ChatRequest) -> Result<Completion, BackendError> {
        let body = req.to_wire();
        let ((text, usage), attempts) = with_retry(self.profile.retry, |_| {
            let _permit = self.throttle.acquire();
            self.post_once(&body)
        })?;
        Ok(Completion { text, attempts, usage })
    }
}
