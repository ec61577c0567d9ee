use std::collections::HashMap;
use std::fs;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatRequest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScriptMode {
    /// `matcher` must equal the request probe.
    #[default]
    Exact,
    /// `matcher` is a regex searched in the probe plus all message text.
    Pattern,
}

/// One fixture: `{"matcher", "mode", "response"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptEntry {
    pub matcher: String,
    #[serde(default)]
    pub mode: ScriptMode,
    pub response: String,
}

impl ScriptEntry {
    pub fn exact(matcher: impl Into<String>, response: impl Into<String>) -> Self {
        Self { matcher: matcher.into(), mode: ScriptMode::Exact, response: response.into() }
    }

    pub fn pattern(matcher: impl Into<String>, response: impl Into<String>) -> Self {
        Self { matcher: matcher.into(), mode: ScriptMode::Pattern, response: response.into() }
    }
}

/// Deterministic stand-in for an LLM.
///
/// Exact entries are consulted first; pattern entries are then tried in
/// declaration order. A miss is an `UnscriptedPrompt` error.
#[derive(Debug, Clone, Default)]
pub struct ScriptedBackend {
    exact: HashMap<String, String>,
    patterns: Vec<(Regex, String)>,
}

impl ScriptedBackend {
    pub fn new(entries: impl IntoIterator<Item = ScriptEntry>) -> Result<Self, BackendError> {
        let mut backend = Self::default();
        for e in entries {
            backend.push(e)?;
        }
        Ok(backend)
    }

    pub fn push(&mut self, entry: ScriptEntry) -> Result<(), BackendError> {
        match entry.mode {
            ScriptMode::Exact => {
                if self.exact.contains_key(&entry.matcher) {
                    return Err(BackendError::AmbiguousScript(format!(
                        "exact matcher `{}` declared twice",
                        entry.matcher
                    )));
                }
                self.exact.insert(entry.matcher, entry.response);
            }
            ScriptMode::Pattern => {
                let re = Regex::new(&entry.matcher).map_err(|e| {
                    BackendError::AmbiguousScript(format!("bad pattern `{}`: {e}", entry.matcher))
                })?;
                self.patterns.push((re, entry.response));
            }
        }
        Ok(())
    }

    /// Loads every `*.json` file in `dir` (sorted by name). A file holds one
    /// entry or an array of entries.
    pub fn from_dir(dir: &Path) -> Result<Self, BackendError> {
        let fixture_err = |path: &Path, reason: String| BackendError::Fixture {
            path: path.display().to_string(),
            reason,
        };
        let mut files: Vec<_> = fs::read_dir(dir)
            .map_err(|e| fixture_err(dir, e.to_string()))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "json"))
            .collect();
        files.sort();
        let mut backend = Self::default();
        for path in files {
            let text = fs::read_to_string(&path).map_err(|e| fixture_err(&path, e.to_string()))?;
            let entries: Vec<ScriptEntry> = match serde_json::from_str::<serde_json::Value>(&text)
                .map_err(|e| fixture_err(&path, e.to_string()))?
            {
                v @ serde_json::Value::Array(_) => serde_json::from_value(v),
                v => serde_json::from_value(v).map(|e| vec![e]),
            }
            .map_err(|e| fixture_err(&path, e.to_string()))?;
            for e in entries {
                backend.push(e)?;
            }
        }
        Ok(backend)
    }

    pub fn len(&self) -> usize {
        self.exact.len() + self.patterns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn lookup(&self, request: &ChatRequest) -> Option<&str> {
        if let Some(r) = self.exact.get(&request.probe) {
            return Some(r);
        }
        if self.patterns.is_empty() {
            return None;
        }
        let hay = request.haystack();
        self.patterns
            .iter()
            .find(|(re, _)| re.is_match(&hay))
            .map(|(_, r)| r.as_str())
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        self.lookup(request)
            .map(str::to_string)
            .ok_or_else(|| BackendError::UnscriptedPrompt(request.probe.clone()))
    }
}
