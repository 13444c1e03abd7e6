use std::collections::HashMap;
use std::path::Path;

use serde::Deserialize;

use super::{BackendError, Capabilities, ChatBackend, ChatRequest, Completion};

#[derive(Deserialize)]
struct FixtureEntry {
    request_hash: String,
    #[serde(default)]
    response: Option<String>,
    #[serde(default)]
    model_id: Option<String>,
}

/// Offline backend: a pure lookup from request hash to response text.
///
/// Fixture files are JSON objects or arrays of objects with `request_hash`
/// and `response` fields. Audit records have both, so an audit directory is a
/// valid fixture set.
#[derive(Debug, Clone, Default)]
pub struct MockBackend {
    model_id: String,
    capabilities: Capabilities,
    fixtures: HashMap<String, String>,
}

impl MockBackend {
    pub fn new(model_id: impl Into<String>, capabilities: Capabilities) -> Self {
        Self {
            model_id: model_id.into(),
            capabilities,
            fixtures: HashMap::new(),
        }
    }

    /// Loads fixtures from `dir`, taking the model id recorded in them.
    pub fn from_dir(dir: &Path, capabilities: Capabilities) -> Result<Self, BackendError> {
        let mut m = Self::new("", capabilities);
        m.load_dir(dir)?;
        if m.model_id.is_empty() {
            m.model_id = "mock".into();
        }
        Ok(m)
    }

    pub fn insert(&mut self, request_hash: impl Into<String>, response: impl Into<String>) {
        self.fixtures.insert(request_hash.into(), response.into());
    }

    pub fn len(&self) -> usize {
        self.fixtures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixtures.is_empty()
    }

    /// Loads every `*.json` file under `dir`, recursively.
    pub fn load_dir(&mut self, dir: &Path) -> Result<(), BackendError> {
        let io = |source| BackendError::Io {
            path: dir.to_path_buf(),
            source,
        };
        let mut entries: Vec<_> = std::fs::read_dir(dir)
            .map_err(io)?
            .collect::<Result<Vec<_>, _>>()
            .map_err(io)?;
        entries.sort_by_key(|e| e.path());
        for e in entries {
            let path = e.path();
            if path.is_dir() {
                self.load_dir(&path)?;
            } else if path.extension().is_some_and(|x| x == "json") {
                self.load_file(&path)?;
            }
        }
        Ok(())
    }

    fn load_file(&mut self, path: &Path) -> Result<(), BackendError> {
        let text = std::fs::read_to_string(path).map_err(|source| BackendError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let bad = |e: serde_json::Error| BackendError::Config(format!("fixture {}: {e}", path.display()));
        let value: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
        let entries: Vec<FixtureEntry> = if value.is_array() {
            serde_json::from_value(value).map_err(bad)?
        } else {
            vec![serde_json::from_value(value).map_err(bad)?]
        };
        for e in entries {
            if self.model_id.is_empty() {
                if let Some(id) = e.model_id {
                    self.model_id = id;
                }
            }
            if let Some(response) = e.response {
                self.fixtures.insert(e.request_hash, response);
            }
        }
        Ok(())
    }
}

impl ChatBackend for MockBackend {
    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn send(&self, req: &ChatRequest) -> Result<Completion, BackendError> {
        let hash = req.hash();
        match self.fixtures.get(&hash) {
            Some(text) => Ok(Completion::text(text.clone())),
            None => Err(BackendError::MissingFixture {
                hash,
                preview: req.last_user_text().chars().take(80).collect(),
            }),
        }
    }
}

type Responder = dyn Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync;

/// Backend answering through a closure.
pub struct FnBackend {
    model_id: String,
    capabilities: Capabilities,
    respond: Box<Responder>,
}

impl FnBackend {
    pub fn new<F>(capabilities: Capabilities, respond: F) -> Self
    where
        F: Fn(&ChatRequest) -> Result<String, BackendError> + Send + Sync + 'static,
    {
        Self {
            model_id: "scripted".into(),
            capabilities,
            respond: Box::new(respond),
        }
    }

    pub fn with_model_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }
}

impl ChatBackend for FnBackend {
    fn capabilities(&self) -> Capabilities {
        self.capabilities
    }

    fn model_id(&self) -> &str {
        &self.model_id
    }

    fn send(&self, req: &ChatRequest) -> Result<Completion, BackendError> {
        (self.respond)(req).map(Completion::text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::{ChatMessage, Role};

    #[test]
    fn canned_fixture_by_hash() {
        let req = ChatRequest::new("mock", vec![ChatMessage::text(Role::User, "hello")]);
        let dir = tempfile::tempdir().unwrap();
        let entry = serde_json::json!([{"request_hash": req.hash(), "response": "world"}]);
        std::fs::write(dir.path().join("f.json"), entry.to_string()).unwrap();
        let mut m = MockBackend::new("mock", Capabilities::ALL);
        m.load_dir(dir.path()).unwrap();
        assert_eq!(m.complete(&req).unwrap().text, "world");

        let other = ChatRequest::new("mock", vec![ChatMessage::text(Role::User, "bye")]);
        assert!(matches!(m.complete(&other), Err(BackendError::MissingFixture { .. })));
    }
}
