//! Device directory: device documents (static metadata and runtime status in
//! one attribute tree) and selector-based lookup.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::{Arc, RwLock};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::expr::Value;
use crate::model::DeviceSelector;

pub use crate::expr::AttributeView;

/// Documents nested deeper than this are rejected.
pub const MAX_DOCUMENT_DEPTH: usize = 32;

#[derive(Debug, Error)]
pub enum DirectoryError {
    #[error("invalid device record `{id}`: {reason}")]
    Validation { id: String, reason: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceRecord {
    pub id: String,
    /// Attribute tree keyed by ontology namespace (`wot`, `brick`, ...).
    pub document: serde_json::Map<String, serde_json::Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub updated_at: Option<DateTime<Utc>>,
}

impl DeviceRecord {
    pub fn new(id: &str, document: serde_json::Value) -> Self {
        let document = match document {
            serde_json::Value::Object(map) => map,
            other => {
                let mut m = serde_json::Map::new();
                m.insert(String::new(), other);
                m
            }
        };
        Self {
            id: id.to_string(),
            document,
            updated_at: None,
        }
    }

    pub fn validate(&self) -> Result<(), DirectoryError> {
        let fail = |reason: String| DirectoryError::Validation {
            id: self.id.clone(),
            reason,
        };
        if self.id.trim().is_empty() {
            return Err(fail("id must not be empty".into()));
        }
        fn walk(node: &serde_json::Value, path: &str, depth: usize) -> Result<(), String> {
            if depth > MAX_DOCUMENT_DEPTH {
                return Err(format!("document deeper than {MAX_DOCUMENT_DEPTH} levels at `{path}`"));
            }
            match node {
                serde_json::Value::Object(map) => map.iter().try_for_each(|(k, v)| {
                    if k.is_empty() || k.contains('.') {
                        return Err(format!("key `{k}` under `{path}` is empty or contains `.`"));
                    }
                    walk(v, &format!("{path}.{k}"), depth + 1)
                }),
                serde_json::Value::Array(items) => {
                    if items.iter().all(|i| matches!(i, serde_json::Value::Bool(_) | serde_json::Value::Number(_) | serde_json::Value::String(_))) {
                        Ok(())
                    } else {
                        Err(format!("list at `{path}` must hold only scalars"))
                    }
                }
                serde_json::Value::Null => Err(format!("null leaf at `{path}`")),
                _ => Ok(()),
            }
        }
        self.document
            .iter()
            .try_for_each(|(k, v)| {
                if k.is_empty() || k.contains('.') {
                    return Err(format!("namespace `{k}` is empty or contains `.`"));
                }
                walk(v, k, 1)
            })
            .map_err(fail)
    }

    /// Walks the document along a dotted path. Interior (object) nodes are not values.
    pub fn resolve_path(&self, path: &str) -> Option<Value> {
        let mut segments = path.split('.');
        let mut node = self.document.get(segments.next()?)?;
        for seg in segments {
            node = node.as_object()?.get(seg)?;
        }
        Value::from_json(node)
    }

    /// Projects the document through a selector's keyword map. Unresolved keywords are left out.
    pub fn project(&self, selector: &DeviceSelector) -> AttributeView {
        selector
            .matching_attribute
            .iter()
            .filter_map(|(keyword, path)| self.resolve_path(path).map(|v| (keyword.clone(), v)))
            .collect()
    }
}

/// Projected `type` keyword, if it is a string.
pub fn projected_type(view: &AttributeView) -> Option<&str> {
    match view.get("type") {
        Some(Value::Str(s)) => Some(s),
        _ => None,
    }
}

type Records = BTreeMap<String, Arc<DeviceRecord>>;

/// Point-in-time view of the directory. Cheap to take; never changes.
#[derive(Debug, Clone, Default)]
pub struct DirectorySnapshot {
    records: Arc<Records>,
}

impl DirectorySnapshot {
    pub fn get(&self, id: &str) -> Option<&Arc<DeviceRecord>> {
        self.records.get(id)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.records.keys().map(String::as_str)
    }

    pub fn records(&self) -> impl Iterator<Item = &Arc<DeviceRecord>> {
        self.records.values()
    }

    /// Every record whose projected type matches the selector (all of them for `*`), ordered by id.
    pub fn find_by_selector(&self, selector: &DeviceSelector) -> Vec<(Arc<DeviceRecord>, AttributeView)> {
        self.records
            .values()
            .filter_map(|rec| {
                let view = rec.project(selector);
                selector
                    .matches_type(projected_type(&view))
                    .then(|| (Arc::clone(rec), view))
            })
            .collect()
    }
}

/// The single local directory. Readers work on snapshots; writers are serialized.
pub struct DeviceDirectory {
    records: RwLock<Arc<Records>>,
    clock: Arc<dyn Clock>,
}

impl Default for DeviceDirectory {
    fn default() -> Self {
        Self::new(Arc::new(SystemClock))
    }
}

impl DeviceDirectory {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            records: RwLock::new(Arc::default()),
            clock,
        }
    }

    pub fn snapshot(&self) -> DirectorySnapshot {
        DirectorySnapshot {
            records: Arc::clone(&self.records.read().unwrap()),
        }
    }

    /// Inserts or replaces a record, returning the previous one.
    pub fn upsert(&self, mut record: DeviceRecord) -> Result<Option<Arc<DeviceRecord>>, DirectoryError> {
        record.validate()?;
        if record.updated_at.is_none() {
            record.updated_at = Some(self.clock.now());
        }
        let mut guard = self.records.write().unwrap();
        Ok(Arc::make_mut(&mut guard).insert(record.id.clone(), Arc::new(record)))
    }

    pub fn remove(&self, id: &str) -> Option<Arc<DeviceRecord>> {
        let mut guard = self.records.write().unwrap();
        if !guard.contains_key(id) {
            return None;
        }
        Arc::make_mut(&mut guard).remove(id)
    }

    pub fn get(&self, id: &str) -> Option<Arc<DeviceRecord>> {
        self.records.read().unwrap().get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.records.read().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn find_by_selector(&self, selector: &DeviceSelector) -> Vec<(Arc<DeviceRecord>, AttributeView)> {
        self.snapshot().find_by_selector(selector)
    }

    /// Loads records from a JSON file (one record or an array) or every `*.json` file in a directory.
    pub fn load_path(&self, path: &Path) -> Result<usize, DirectoryError> {
        let io = |source| DirectoryError::Io {
            path: path.display().to_string(),
            source,
        };
        let mut files = Vec::new();
        if path.is_dir() {
            for entry in std::fs::read_dir(path).map_err(io)? {
                let p = entry.map_err(io)?.path();
                if p.extension().is_some_and(|e| e == "json") {
                    files.push(p);
                }
            }
            files.sort();
        } else {
            files.push(path.to_path_buf());
        }
        let mut count = 0;
        for file in files {
            let text = std::fs::read_to_string(&file).map_err(|source| DirectoryError::Io {
                path: file.display().to_string(),
                source,
            })?;
            for record in parse_records(&text).map_err(|source| DirectoryError::Parse {
                path: file.display().to_string(),
                source,
            })? {
                self.upsert(record)?;
                count += 1;
            }
        }
        Ok(count)
    }
}

pub fn parse_records(text: &str) -> serde_json::Result<Vec<DeviceRecord>> {
    match serde_json::from_str::<serde_json::Value>(text)? {
        v @ serde_json::Value::Array(_) => serde_json::from_value(v),
        v => Ok(vec![serde_json::from_value(v)?]),
    }
}
