use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{BackendError, Capabilities, ChatBackend, ChatRequest, Completion, Usage};

/// One request/response exchange as written to disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub request_hash: String,
    pub model_id: String,
    /// Request body with images replaced by their digests.
    pub request: Value,
    /// `None` when the call failed.
    pub response: Option<String>,
    pub error: Option<String>,
    pub attempts: u32,
    pub usage: Option<Usage>,
    pub started_at_ms: u128,
    pub finished_at_ms: u128,
}

/// Directory of audit records, one file per distinct request.
#[derive(Debug, Clone)]
pub struct AuditLog {
    dir: PathBuf,
}

fn now_ms() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

impl AuditLog {
    pub fn create(dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir).map_err(|source| BackendError::Io {
            path: dir.clone(),
            source,
        })?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&self, rec: &AuditRecord) -> Result<(), BackendError> {
        let suffix = if rec.response.is_some() { "" } else { ".failed" };
        let path = self.dir.join(format!("{}{suffix}.json", rec.request_hash));
        let text = serde_json::to_string_pretty(rec).expect("audit record serializes");
        // write-then-rename so a concurrent reader never sees half a file
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        std::fs::write(&tmp, text)
            .and_then(|_| std::fs::rename(&tmp, &path))
            .map_err(|source| BackendError::Io { path, source })
    }
}

/// Records every exchange of the wrapped backend.
pub struct Audited<B> {
    inner: B,
    log: AuditLog,
}

impl<B: ChatBackend> Audited<B> {
    pub fn new(inner: B, log: AuditLog) -> Self {
        Self { inner, log }
    }
}

impl<B: ChatBackend> ChatBackend for Audited<B> {
    fn capabilities(&self) -> Capabilities {
        self.inner.capabilities()
    }

    fn model_id(&self) -> &str {
        self.inner.model_id()
    }

    fn send(&self, req: &ChatRequest) -> Result<Completion, BackendError> {
        let started_at_ms = now_ms();
        let result = self.inner.send(req);
        let (response, error, attempts, usage) = match &result {
            Ok(c) => (Some(c.text.clone()), None, c.attempts, c.usage),
            Err(e) => (None, Some(e.to_string()), 0, None),
        };
        let rec = AuditRecord {
            request_hash: req.hash(),
            model_id: req.model_id.clone(),
            request: req.to_digest_form(),
            response,
            error,
            attempts,
            usage,
            started_at_ms,
            finished_at_ms: now_ms(),
        };
        if let Err(e) = self.log.write(&rec) {
            log::error!("audit write failed: {e}");
        }
        result
    }
}
