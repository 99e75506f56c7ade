//! Record/replay store for model calls, persisted as JSONL.
//!
//! Each line is `{"key": {"role", "image", "query", "flags"}, "response": {...}}`.
//! Keys are canonical: the query is trimmed, lowercased and has whitespace
//! runs collapsed, so `"  Is it RED? "` and `"is it red?"` share an entry.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Backend, GatewayError, ModelRequest, ModelResponse, Role};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FixtureError {
    #[error("fixture file {path}: {message}")]
    Io { path: String, message: String },
    #[error("fixture file {path} line {line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("fixture store is replay-only")]
    ReadOnly,
}

pub fn normalize_query(query: &str) -> String {
    query
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FixtureKey {
    pub role: Role,
    #[serde(default)]
    pub image: String,
    pub query: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub flags: BTreeMap<String, String>,
}

impl FixtureKey {
    pub fn new(role: Role, image: impl Into<String>, query: &str) -> Self {
        Self {
            role,
            image: image.into(),
            query: normalize_query(query),
            flags: BTreeMap::new(),
        }
    }

    pub fn from_request(request: &ModelRequest) -> Self {
        Self {
            role: request.role,
            image: request.image.trim().to_string(),
            query: normalize_query(&request.query),
            flags: request
                .flags
                .iter()
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .collect(),
        }
    }

    /// Re-normalizes a key read from disk, so hand-written files may use any
    /// casing or spacing.
    fn canonical(self) -> Self {
        Self {
            image: self.image.trim().to_string(),
            query: normalize_query(&self.query),
            ..self
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).unwrap_or_default()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct FixtureLine {
    key: FixtureKey,
    response: ModelResponse,
}

#[derive(Debug, Default)]
struct Sink {
    overlay: HashMap<FixtureKey, ModelResponse>,
    file: Option<File>,
}

/// Replay entries loaded once and read without locking; in record mode new
/// entries go to a mutex-guarded overlay and are appended to the file.
#[derive(Debug, Default)]
pub struct FixtureStore {
    path: Option<PathBuf>,
    entries: HashMap<FixtureKey, ModelResponse>,
    sink: Option<Mutex<Sink>>,
}

fn io_error(path: &Path, err: std::io::Error) -> FixtureError {
    FixtureError::Io {
        path: path.display().to_string(),
        message: err.to_string(),
    }
}

impl FixtureStore {
    /// Empty replay-only store.
    pub fn empty() -> Self {
        Self::default()
    }

    /// Empty store that accepts writes but persists nothing.
    pub fn in_memory() -> Self {
        Self {
            sink: Some(Mutex::new(Sink::default())),
            ..Self::default()
        }
    }

    pub fn from_entries(entries: impl IntoIterator<Item = (FixtureKey, ModelResponse)>) -> Self {
        Self {
            entries: entries
                .into_iter()
                .map(|(k, v)| (k.canonical(), v))
                .collect(),
            ..Self::default()
        }
    }

    /// Loads a JSONL file for replay. Blank lines are ignored; a later line
    /// for the same key replaces an earlier one.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| io_error(path, e))?;
        let mut entries = HashMap::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| io_error(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: FixtureLine =
                serde_json::from_str(&line).map_err(|e| FixtureError::Parse {
                    path: path.display().to_string(),
                    line: i + 1,
                    message: e.to_string(),
                })?;
            entries.insert(parsed.key.canonical(), parsed.response);
        }
        Ok(Self {
            path: Some(path.to_path_buf()),
            entries,
            sink: None,
        })
    }

    /// Opens `path` for recording: existing entries replay, new ones are
    /// appended. The file is created if missing.
    pub fn open_for_recording(path: impl AsRef<Path>) -> Result<Self, FixtureError> {
        let path = path.as_ref();
        let mut store = if path.exists() {
            Self::load(path)?
        } else {
            Self::empty()
        };
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| io_error(path, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| io_error(path, e))?;
        store.path = Some(path.to_path_buf());
        store.sink = Some(Mutex::new(Sink {
            overlay: HashMap::new(),
            file: Some(file),
        }));
        Ok(store)
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn is_writable(&self) -> bool {
        self.sink.is_some()
    }

    pub fn len(&self) -> usize {
        let overlay_new = self.sink.as_ref().map_or(0, |s| {
            let sink = s.lock().unwrap_or_else(|e| e.into_inner());
            sink.overlay
                .keys()
                .filter(|k| !self.entries.contains_key(*k))
                .count()
        });
        self.entries.len() + overlay_new
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &FixtureKey) -> Option<ModelResponse> {
        if let Some(sink) = &self.sink {
            let sink = sink.lock().unwrap_or_else(|e| e.into_inner());
            if let Some(resp) = sink.overlay.get(key) {
                return Some(resp.clone());
            }
        }
        self.entries.get(key).cloned()
    }

    pub fn append(&self, key: FixtureKey, response: ModelResponse) -> Result<(), FixtureError> {
        let sink = self.sink.as_ref().ok_or(FixtureError::ReadOnly)?;
        let mut sink = sink.lock().unwrap_or_else(|e| e.into_inner());
        let key = key.canonical();
        if let Some(file) = sink.file.as_mut() {
            let line = serde_json::to_string(&FixtureLine {
                key: key.clone(),
                response: response.clone(),
            })
            .map_err(|e| FixtureError::Io {
                path: self
                    .path
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
                message: e.to_string(),
            })?;
            let path = self.path.clone().unwrap_or_default();
            writeln!(file, "{line}").map_err(|e| io_error(&path, e))?;
            file.flush().map_err(|e| io_error(&path, e))?;
        }
        sink.overlay.insert(key, response);
        Ok(())
    }

    /// All entries in key order, for writing a store back out.
    pub fn to_jsonl(&self) -> String {
        let mut all: BTreeMap<FixtureKey, ModelResponse> = self
            .entries
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        if let Some(sink) = &self.sink {
            let sink = sink.lock().unwrap_or_else(|e| e.into_inner());
            all.extend(sink.overlay.iter().map(|(k, v)| (k.clone(), v.clone())));
        }
        let mut out = String::new();
        for (key, response) in all {
            let line = serde_json::to_string(&FixtureLine { key, response }).unwrap_or_default();
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

/// Replays responses from a [`FixtureStore`]; a missing key is a
/// [`GatewayError::FixtureMiss`] naming the canonical key.
#[derive(Debug, Clone)]
pub struct FixtureBackend {
    name: String,
    store: Arc<FixtureStore>,
}

impl FixtureBackend {
    pub fn new(name: impl Into<String>, store: Arc<FixtureStore>) -> Self {
        Self {
            name: name.into(),
            store,
        }
    }

    pub fn store(&self) -> &Arc<FixtureStore> {
        &self.store
    }
}

impl Backend for FixtureBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn call(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        let key = FixtureKey::from_request(request);
        self.store
            .get(&key)
            .ok_or_else(|| GatewayError::FixtureMiss {
                backend: self.name.clone(),
                key: key.to_json(),
            })
    }
}

/// Forwards every call to a live backend and records the response.
pub struct RecordingBackend {
    store: Arc<FixtureStore>,
    live: Arc<dyn Backend>,
}

impl RecordingBackend {
    pub fn new(store: Arc<FixtureStore>, live: Arc<dyn Backend>) -> Result<Self, FixtureError> {
        if !store.is_writable() {
            return Err(FixtureError::ReadOnly);
        }
        Ok(Self { store, live })
    }
}

impl Backend for RecordingBackend {
    fn name(&self) -> &str {
        self.live.name()
    }

    fn call(&self, request: &ModelRequest) -> Result<ModelResponse, GatewayError> {
        let response = self.live.call(request)?;
        self.store
            .append(FixtureKey::from_request(request), response.clone())?;
        Ok(response)
    }
}
