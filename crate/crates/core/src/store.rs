//! Policy repository indexed by (object type, action), with subject type as a
//! secondary filter.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use chrono::{DateTime, Utc};
use serde::Serialize;
use thiserror::Error;

use crate::clock::{Clock, SystemClock};
use crate::expr::{Expr, FunctionRegistry};
use crate::lint::{has_errors, validate_policy, Diagnostic};
use crate::model::{PolicySpec, WILDCARD};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("policy `{0}` already exists")]
    DuplicateId(String),
    #[error("policy `{id}` failed validation: {}", summarize(.diagnostics))]
    ValidationFailed { id: String, diagnostics: Vec<Diagnostic> },
    #[error("policy bundle {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("policy bundle {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
}

fn summarize(diags: &[Diagnostic]) -> String {
    diags.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ")
}

/// Lowercased retrieval key. `*` in a stored key matches any query value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct PolicyIndexKey {
    pub object_type: String,
    pub action: String,
    pub subject_type: String,
}

pub fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

impl PolicyIndexKey {
    pub fn of(spec: &PolicySpec) -> Self {
        Self {
            object_type: normalize(&spec.object_device.device_type),
            action: normalize(&spec.action),
            subject_type: spec
                .subject_device
                .as_ref()
                .map(|s| normalize(&s.device_type))
                .unwrap_or_else(|| WILDCARD.to_string()),
        }
    }

    /// Match predicate for already-normalized query values.
    pub fn matches(&self, subject_type: &str, action: &str, object_type: &str) -> bool {
        self.action == action
            && (self.object_type == WILDCARD || self.object_type == object_type)
            && (self.subject_type == WILDCARD || self.subject_type == subject_type)
    }
}

/// A validated policy with its expressions parsed once.
#[derive(Debug, Clone)]
pub struct Policy {
    pub spec: PolicySpec,
    pub relationship: Expr,
    pub assertion: Option<Expr>,
    pub key: PolicyIndexKey,
}

impl Policy {
    /// Validates and compiles. On success returns the policy and any warnings.
    pub fn compile(
        spec: PolicySpec,
        functions: &FunctionRegistry,
        now: DateTime<Utc>,
    ) -> Result<(Self, Vec<Diagnostic>), StoreError> {
        let diagnostics = validate_policy(&spec, functions, now);
        if has_errors(&diagnostics) {
            return Err(StoreError::ValidationFailed {
                id: spec.id.clone(),
                diagnostics,
            });
        }
        // Validation guarantees both parse.
        let relationship = spec.parse_relationship().expect("validated relationship");
        let assertion = spec.parse_assertion().map(|r| r.expect("validated assertion"));
        let key = PolicyIndexKey::of(&spec);
        Ok((
            Self {
                spec,
                relationship,
                assertion,
                key,
            },
            diagnostics,
        ))
    }

    pub fn id(&self) -> &str {
        &self.spec.id
    }

    pub fn is_expired(&self, at: DateTime<Utc>) -> bool {
        self.spec.expiration.is_some_and(|exp| exp <= at)
    }
}

#[derive(Debug, Clone, Default)]
struct StoreState {
    policies: BTreeMap<String, Arc<Policy>>,
    index: HashMap<(String, String), BTreeSet<String>>,
    object_type_paths: BTreeMap<String, usize>,
    subject_type_paths: BTreeMap<String, usize>,
}

fn bump(counts: &mut BTreeMap<String, usize>, key: Option<&str>, up: bool) {
    let Some(key) = key else { return };
    if up {
        *counts.entry(key.to_string()).or_default() += 1;
    } else if let Some(n) = counts.get_mut(key) {
        *n -= 1;
        if *n == 0 {
            counts.remove(key);
        }
    }
}

impl StoreState {
    fn insert(&mut self, policy: Arc<Policy>) {
        let k = &policy.key;
        self.index
            .entry((k.object_type.clone(), k.action.clone()))
            .or_default()
            .insert(policy.id().to_string());
        bump(&mut self.object_type_paths, policy.spec.object_device.type_path(), true);
        let subject_path = policy.spec.subject_device.as_ref().and_then(|s| s.type_path());
        bump(&mut self.subject_type_paths, subject_path, true);
        self.policies.insert(policy.id().to_string(), policy);
    }

    fn remove(&mut self, id: &str) -> Option<Arc<Policy>> {
        let policy = self.policies.remove(id)?;
        let slot = (policy.key.object_type.clone(), policy.key.action.clone());
        if let Some(ids) = self.index.get_mut(&slot) {
            ids.remove(id);
            if ids.is_empty() {
                self.index.remove(&slot);
            }
        }
        bump(&mut self.object_type_paths, policy.spec.object_device.type_path(), false);
        let subject_path = policy.spec.subject_device.as_ref().and_then(|s| s.type_path());
        bump(&mut self.subject_type_paths, subject_path, false);
        Some(policy)
    }
}

/// Read-only, point-in-time view of the store.
#[derive(Debug, Clone, Default)]
pub struct StoreSnapshot {
    state: Arc<StoreState>,
}

impl StoreSnapshot {
    pub fn get(&self, id: &str) -> Option<&Arc<Policy>> {
        self.state.policies.get(id)
    }

    pub fn len(&self) -> usize {
        self.state.policies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.state.policies.is_empty()
    }

    /// All policies, id-ordered.
    pub fn policies(&self) -> impl Iterator<Item = &Arc<Policy>> {
        self.state.policies.values()
    }

    /// Ontology paths policies use for the object's `type` keyword.
    pub fn object_type_paths(&self) -> impl Iterator<Item = &str> {
        self.state.object_type_paths.keys().map(String::as_str)
    }

    /// Ontology paths policies use for the subject's `type` keyword.
    pub fn subject_type_paths(&self) -> impl Iterator<Item = &str> {
        self.state.subject_type_paths.keys().map(String::as_str)
    }

    /// Non-expired policies whose key matches, ordered by (priority, id).
    ///
    /// A superset of the policies that can fire for a change with these types.
    pub fn relevant_policies(
        &self,
        subject_type: &str,
        action: &str,
        object_type: &str,
        at: DateTime<Utc>,
    ) -> Vec<Arc<Policy>> {
        let (subject_type, action, object_type) = (normalize(subject_type), normalize(action), normalize(object_type));
        let mut ids: BTreeSet<&String> = BTreeSet::new();
        for slot_type in [object_type.as_str(), WILDCARD] {
            if let Some(found) = self.state.index.get(&(slot_type.to_string(), action.clone())) {
                ids.extend(found);
            }
        }
        let mut out: Vec<Arc<Policy>> = ids
            .into_iter()
            .filter_map(|id| self.state.policies.get(id))
            .filter(|p| p.key.matches(&subject_type, &action, &object_type) && !p.is_expired(at))
            .cloned()
            .collect();
        out.sort_by(|a, b| (a.spec.priority, a.id()).cmp(&(b.spec.priority, b.id())));
        out
    }
}

pub struct PolicyStore {
    state: RwLock<Arc<StoreState>>,
    writer: Mutex<()>,
    functions: FunctionRegistry,
    clock: Arc<dyn Clock>,
    bundle_path: Option<PathBuf>,
}

impl Default for PolicyStore {
    fn default() -> Self {
        Self::new(FunctionRegistry::default(), Arc::new(SystemClock))
    }
}

impl PolicyStore {
    /// In-memory store.
    pub fn new(functions: FunctionRegistry, clock: Arc<dyn Clock>) -> Self {
        Self {
            state: RwLock::new(Arc::default()),
            writer: Mutex::new(()),
            functions,
            clock,
            bundle_path: None,
        }
    }

    /// Store backed by a bundle file: loaded now if it exists, rewritten on every mutation.
    pub fn open(path: &Path, functions: FunctionRegistry, clock: Arc<dyn Clock>) -> Result<Self, StoreError> {
        let mut store = Self::new(functions, clock);
        if path.exists() {
            let specs = read_bundle(path)?;
            let now = store.clock.now();
            let mut state = StoreState::default();
            for spec in specs {
                if state.policies.contains_key(&spec.id) {
                    return Err(StoreError::DuplicateId(spec.id));
                }
                let (policy, _) = Policy::compile(spec, &store.functions, now)?;
                state.insert(Arc::new(policy));
            }
            *store.state.get_mut().unwrap() = Arc::new(state);
        }
        store.bundle_path = Some(path.to_path_buf());
        Ok(store)
    }

    pub fn functions(&self) -> &FunctionRegistry {
        &self.functions
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn snapshot(&self) -> StoreSnapshot {
        StoreSnapshot {
            state: Arc::clone(&self.state.read().unwrap()),
        }
    }

    fn mutate<T>(&self, f: impl FnOnce(&mut StoreState) -> Result<T, StoreError>) -> Result<T, StoreError> {
        let _serialized = self.writer.lock().unwrap();
        let mut next = (**self.state.read().unwrap()).clone();
        let out = f(&mut next)?;
        if let Some(path) = &self.bundle_path {
            write_bundle(path, next.policies.values().map(|p| &p.spec))?;
        }
        *self.state.write().unwrap() = Arc::new(next);
        Ok(out)
    }

    /// Validates and adds a policy; returns its warnings.
    pub fn add(&self, spec: PolicySpec) -> Result<Vec<Diagnostic>, StoreError> {
        let (policy, warnings) = Policy::compile(spec, &self.functions, self.clock.now())?;
        self.mutate(|state| {
            if state.policies.contains_key(policy.id()) {
                return Err(StoreError::DuplicateId(policy.id().to_string()));
            }
            state.insert(Arc::new(policy));
            Ok(warnings)
        })
    }

    pub fn remove(&self, id: &str) -> Result<Option<Arc<Policy>>, StoreError> {
        if !self.snapshot().state.policies.contains_key(id) {
            return Ok(None);
        }
        self.mutate(|state| Ok(state.remove(id)))
    }

    /// Drops every policy expired at `at`.
    pub fn purge_expired(&self, at: DateTime<Utc>) -> Result<Vec<Arc<Policy>>, StoreError> {
        let expired: Vec<String> = self
            .snapshot()
            .policies()
            .filter(|p| p.is_expired(at))
            .map(|p| p.id().to_string())
            .collect();
        if expired.is_empty() {
            return Ok(Vec::new());
        }
        self.mutate(|state| Ok(expired.iter().filter_map(|id| state.remove(id)).collect()))
    }

    pub fn get(&self, id: &str) -> Option<Arc<Policy>> {
        self.snapshot().get(id).cloned()
    }

    pub fn len(&self) -> usize {
        self.snapshot().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn relevant_policies(
        &self,
        subject_type: &str,
        action: &str,
        object_type: &str,
        at: DateTime<Utc>,
    ) -> Vec<Arc<Policy>> {
        self.snapshot().relevant_policies(subject_type, action, object_type, at)
    }
}

pub fn read_bundle(path: &Path) -> Result<Vec<PolicySpec>, StoreError> {
    let text = std::fs::read_to_string(path).map_err(|source| StoreError::Io {
        path: path.display().to_string(),
        source,
    })?;
    PolicySpec::bundle_from_json(&text).map_err(|source| StoreError::Parse {
        path: path.display().to_string(),
        source,
    })
}

fn write_bundle<'a>(path: &Path, specs: impl Iterator<Item = &'a PolicySpec>) -> Result<(), StoreError> {
    let io = |source| StoreError::Io {
        path: path.display().to_string(),
        source,
    };
    let specs: Vec<&PolicySpec> = specs.collect();
    let mut text = serde_json::to_string_pretty(&specs).expect("policy specs serialize");
    text.push('\n');
    // Write-then-rename so a crash never leaves a truncated bundle.
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).map_err(io)?;
    std::fs::rename(&tmp, path).map_err(io)
}

#[cfg(test)]
mod tests {
    use chrono::{Duration, TimeZone};

    use super::*;
    use crate::clock::FixedClock;
    use crate::model::{DeviceSelector, ResponseType};

    fn at() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 6, 1, 12, 0, 0).unwrap()
    }

    fn store() -> PolicyStore {
        PolicyStore::new(FunctionRegistry::default(), Arc::new(FixedClock::new(at())))
    }

    fn policy(id: &str, object: &str, action: &str, priority: u8) -> PolicySpec {
        PolicySpec {
            id: id.into(),
            description: "Warn: test".into(),
            category: None,
            subject_device: None,
            action: action.into(),
            object_device: if object == "*" {
                DeviceSelector::new("*")
            } else {
                DeviceSelector::new(object).attr("type", "wot.type")
            },
            affected_device: BTreeMap::new(),
            relationship: "True".into(),
            assertion: None,
            response: ResponseType::Warn,
            expiration: None,
            alert: None,
            alert_targets: vec![],
            priority,
        }
    }

    fn ids(ps: &[Arc<Policy>]) -> Vec<&str> {
        ps.iter().map(|p| p.id()).collect()
    }

    #[test]
    fn add_lookup_remove() {
        let s = store();
        s.add(policy("org-1", "heater", "turn on", 6)).unwrap();
        assert_eq!(ids(&s.relevant_policies("app", "turn on", "heater", at())), vec!["org-1"]);
        assert_eq!(ids(&s.relevant_policies("app", "Turn On", "HEATER", at())), vec!["org-1"]);
        assert!(s.relevant_policies("app", "turn off", "heater", at()).is_empty());
        assert!(matches!(
            s.add(policy("org-1", "heater", "turn on", 6)),
            Err(StoreError::DuplicateId(_))
        ));
        assert_eq!(s.remove("org-1").unwrap().unwrap().id(), "org-1");
        assert!(s.remove("org-1").unwrap().is_none());
        assert!(s.relevant_policies("app", "turn on", "heater", at()).is_empty());
    }

    #[test]
    fn invalid_policy_rejected() {
        let s = store();
        let mut p = policy("org-1", "heater", "turn on", 6);
        p.assertion = Some("objectDevice.type ==".into());
        assert!(matches!(s.add(p), Err(StoreError::ValidationFailed { .. })));
        assert!(s.is_empty());
    }

    #[test]
    fn ordering_wildcards_and_subjects() {
        let s = store();
        s.add(policy("org-b", "heater", "turn on", 3)).unwrap();
        s.add(policy("org-a", "heater", "turn on", 3)).unwrap();
        s.add(policy("org-0", "*", "turn on", 7)).unwrap();
        s.add(policy("org-z", "heater", "turn on", 0)).unwrap();
        let mut voice = policy("org-v", "heater", "turn on", 1);
        voice.subject_device = Some(DeviceSelector::new("assistant").attr("type", "wot.type"));
        s.add(voice).unwrap();
        assert_eq!(
            ids(&s.relevant_policies("app", "turn on", "heater", at())),
            vec!["org-z", "org-a", "org-b", "org-0"]
        );
        assert_eq!(
            ids(&s.relevant_policies("assistant", "turn on", "heater", at())),
            vec!["org-z", "org-v", "org-a", "org-b", "org-0"]
        );
        assert_eq!(ids(&s.relevant_policies("app", "turn on", "lamp", at())), vec!["org-0"]);
        let snap = s.snapshot();
        assert_eq!(snap.object_type_paths().collect::<Vec<_>>(), vec!["wot.type"]);
        assert_eq!(snap.subject_type_paths().collect::<Vec<_>>(), vec!["wot.type"]);
    }

    #[test]
    fn expiration() {
        let s = store();
        let mut p = policy("org-1", "heater", "turn on", 6);
        p.expiration = Some(at() - Duration::days(1));
        s.add(p).unwrap();
        assert!(s.relevant_policies("app", "turn on", "heater", at()).is_empty());
        assert_eq!(s.len(), 1);
        assert_eq!(s.purge_expired(at()).unwrap().len(), 1);
        assert!(s.is_empty());
    }

    #[test]
    fn bundle_write_through() {
        let tmp = tempfile::tempdir().unwrap();
        let path = tmp.path().join("policies.json");
        let clock = Arc::new(FixedClock::new(at()));
        {
            let s = PolicyStore::open(&path, FunctionRegistry::default(), clock.clone()).unwrap();
            s.add(policy("org-1", "heater", "turn on", 6)).unwrap();
            s.add(policy("org-2", "lamp", "turn on", 6)).unwrap();
            s.remove("org-1").unwrap();
        }
        let s = PolicyStore::open(&path, FunctionRegistry::default(), clock).unwrap();
        assert_eq!(s.snapshot().policies().map(|p| p.id().to_string()).collect::<Vec<_>>(), vec!["org-2"]);
        assert_eq!(read_bundle(&path).unwrap().len(), 1);
    }
}
