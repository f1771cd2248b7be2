use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One query to a model.
#[derive(Debug, Clone, Copy)]
pub struct AdapterRequest<'a> {
    pub model: &'a str,
    pub item: &'a str,
    /// 1-based attempt number within the repair loop.
    pub attempt: u32,
    pub prompt: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AdapterError {
    #[error("no replay fixture for model {model:?}, item {item:?}, attempt {attempt}")]
    MissingFixture { model: String, item: String, attempt: u32 },
    #[error("transport failure for model {model:?}: {message}")]
    Transport { model: String, message: String },
    #[error("adapter misconfigured: {0}")]
    Config(String),
}

/// A chat model behind some transport. Implementations must be usable from
/// several worker threads at once.
pub trait ModelAdapter: Send + Sync {
    fn complete(&self, request: &AdapterRequest<'_>) -> Result<String, AdapterError>;
}

impl<T: ModelAdapter + ?Sized> ModelAdapter for Arc<T> {
    fn complete(&self, request: &AdapterRequest<'_>) -> Result<String, AdapterError> {
        (**self).complete(request)
    }
}

/// One line of a replay fixture file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayEntry {
    pub model: String,
    pub item: String,
    pub attempt: u32,
    pub response: String,
}

/// Recorded responses keyed by (model, item, attempt).
#[derive(Debug, Clone, Default)]
pub struct ReplayFixtures {
    responses: HashMap<(String, String, u32), String>,
}

impl ReplayFixtures {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, model: &str, item: &str, attempt: u32, response: impl Into<String>) {
        self.responses
            .insert((model.to_string(), item.to_string(), attempt), response.into());
    }

    pub fn from_entries(entries: impl IntoIterator<Item = ReplayEntry>) -> Self {
        let mut fixtures = Self::new();
        for e in entries {
            fixtures.insert(&e.model, &e.item, e.attempt, e.response);
        }
        fixtures
    }

    pub fn load(path: &Path) -> Result<Self, AdapterError> {
        let file = std::fs::File::open(path)
            .map_err(|e| AdapterError::Config(format!("cannot open fixture {}: {e}", path.display())))?;
        let mut fixtures = Self::new();
        for (idx, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| AdapterError::Config(format!("{}: {e}", path.display())))?;
            if line.trim().is_empty() {
                continue;
            }
            let entry: ReplayEntry = serde_json::from_str(&line)
                .map_err(|e| AdapterError::Config(format!("{}:{}: {e}", path.display(), idx + 1)))?;
            fixtures.insert(&entry.model, &entry.item, entry.attempt, entry.response);
        }
        Ok(fixtures)
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }

    pub fn get(&self, model: &str, item: &str, attempt: u32) -> Option<&str> {
        self.responses
            .get(&(model.to_string(), item.to_string(), attempt))
            .map(String::as_str)
    }
}

/// Serves recorded responses. The prompt text is ignored.
#[derive(Debug, Clone)]
pub struct ReplayAdapter {
    fixtures: Arc<ReplayFixtures>,
}

impl ReplayAdapter {
    pub fn new(fixtures: Arc<ReplayFixtures>) -> Self {
        ReplayAdapter { fixtures }
    }
}

impl ModelAdapter for ReplayAdapter {
    fn complete(&self, request: &AdapterRequest<'_>) -> Result<String, AdapterError> {
        self.fixtures
            .get(request.model, request.item, request.attempt)
            .map(str::to_string)
            .ok_or_else(|| AdapterError::MissingFixture {
                model: request.model.to_string(),
                item: request.item.to_string(),
                attempt: request.attempt,
            })
    }
}
