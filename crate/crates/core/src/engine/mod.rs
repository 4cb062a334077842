//! The decision pipeline: change → relevant policies → context → bindings →
//! assertions → aggregated effect.

mod aggregate;
mod binding;
mod log;
mod types;

use std::collections::{BTreeSet, HashMap};
use std::hash::{BuildHasher, RandomState};
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Duration, Utc};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use aggregate::aggregate_responses;
pub use binding::{
    bind_affected, evaluate_assertion, AffectedBindings, AssertionError, AssertionOutcome, BindOutcome, BoundDevice,
};
pub use log::{EngineLog, JsonLinesLog, LogRecord, MemoryLog, Metrics, MetricsSnapshot, NullLog, Outcome, Stage};
pub use types::{Alert, Change, Effect, FiredPolicy, CONFIRMATION_TOKEN_PARAM};

use crate::directory::{projected_type, DeviceDirectory, DeviceRecord, DirectorySnapshot};
use crate::expr::{eval_expr, AttributeView, EvalError, Value, AFFECTED_ROOT};
use crate::model::{DeviceSelector, ResponseType, APP_SUBJECT_ID, APP_SUBJECT_TYPE, LOWEST_PRIORITY, OBJECT_ROOT, SUBJECT_ROOT};
use crate::store::{normalize, Policy, PolicyStore, StoreSnapshot};

/// Policy id reported when strict mode denies a change no policy applies to.
pub const STRICT_DEFAULT_POLICY_ID: &str = "strict-mode-default";

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Deny changes that no policy applies to, instead of approving them.
    pub strict: bool,
    /// How long a DOUBLE_CHECK confirmation token stays valid.
    pub confirmation_ttl: Duration,
    /// Upper bound on EACH-binding combinations evaluated per policy.
    pub max_combinations: usize,
    /// Retrieve candidates through the type–action index. When off, every stored policy is evaluated.
    pub use_index: bool,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            strict: false,
            confirmation_ttl: Duration::minutes(5),
            max_combinations: 100_000,
            use_index: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EngineError {
    #[error("unknown {role} device `{id}`")]
    UnknownDevice { role: &'static str, id: String },
    #[error("invalid change: {0}")]
    InvalidChange(String),
}

#[derive(Debug, Clone)]
struct PendingConfirmation {
    subject: String,
    action: String,
    object: String,
    issued_at: DateTime<Utc>,
}

enum Subject {
    App,
    Device(Arc<DeviceRecord>),
}

impl Subject {
    fn id(&self) -> &str {
        match self {
            Subject::App => APP_SUBJECT_ID,
            Subject::Device(rec) => &rec.id,
        }
    }
}

enum PolicyVerdict {
    NotApplicable,
    NotFired,
    Fired { alerts: Vec<Alert> },
    Failed,
}

pub struct PolicyEngine {
    store: Arc<PolicyStore>,
    directory: Arc<DeviceDirectory>,
    config: EngineConfig,
    log: Arc<dyn EngineLog>,
    metrics: Metrics,
    token_secret: [u8; 32],
    pending: Mutex<HashMap<String, PendingConfirmation>>,
}

impl PolicyEngine {
    pub fn new(store: Arc<PolicyStore>, directory: Arc<DeviceDirectory>) -> Self {
        let mut secret = [0u8; 32];
        for chunk in secret.chunks_mut(8) {
            chunk.copy_from_slice(&RandomState::new().hash_one(0u8).to_le_bytes());
        }
        Self {
            store,
            directory,
            config: EngineConfig::default(),
            log: Arc::new(NullLog),
            metrics: Metrics::default(),
            token_secret: secret,
            pending: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_config(mut self, config: EngineConfig) -> Self {
        self.config = config;
        self
    }

    pub fn with_log(mut self, log: Arc<dyn EngineLog>) -> Self {
        self.log = log;
        self
    }

    /// Fixes the key confirmation tokens are derived from. Engines sharing a secret issue identical tokens.
    pub fn with_token_secret(mut self, secret: &[u8]) -> Self {
        self.token_secret = Sha256::digest(secret).into();
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<PolicyStore> {
        &self.store
    }

    pub fn directory(&self) -> &Arc<DeviceDirectory> {
        &self.directory
    }

    pub fn metrics(&self) -> MetricsSnapshot {
        self.metrics.snapshot()
    }

    fn log(&self, change: &Change, policy: Option<&str>, stage: Stage, outcome: Outcome, detail: impl Into<String>) {
        self.log.record(LogRecord {
            change_id: change.change_id.clone(),
            policy_id: policy.map(str::to_string),
            stage,
            outcome,
            detail: detail.into(),
        });
    }

    /// Candidate policies for a change: the union of index lookups over every type the subject and
    /// object project to under the type paths stored policies use.
    pub fn retrieve(
        &self,
        store: &StoreSnapshot,
        subject: Option<&DeviceRecord>,
        action: &str,
        object: &DeviceRecord,
        at: DateTime<Utc>,
    ) -> Vec<Arc<Policy>> {
        fn types_of<'a>(record: &DeviceRecord, paths: impl Iterator<Item = &'a str>) -> BTreeSet<String> {
            let mut types: BTreeSet<String> = paths
                .filter_map(|p| match record.resolve_path(p) {
                    Some(Value::Str(t)) => Some(normalize(&t)),
                    _ => None,
                })
                .collect();
            if types.is_empty() {
                // Untyped: only wildcard keys can match.
                types.insert(String::new());
            }
            types
        }
        if !self.config.use_index {
            let mut all: Vec<_> = store.policies().filter(|p| !p.is_expired(at)).cloned().collect();
            all.sort_by(|a, b| (a.spec.priority, a.id()).cmp(&(b.spec.priority, b.id())));
            return all;
        }
        let object_types = types_of(object, store.object_type_paths());
        let subject_types = match subject {
            None => BTreeSet::from([APP_SUBJECT_TYPE.to_string()]),
            Some(rec) => types_of(rec, store.subject_type_paths()),
        };
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for s in &subject_types {
            for o in &object_types {
                for p in store.relevant_policies(s, action, o, at) {
                    if seen.insert(p.id().to_string()) {
                        out.push(p);
                    }
                }
            }
        }
        out.sort_by(|a, b| (a.spec.priority, a.id()).cmp(&(b.spec.priority, b.id())));
        out
    }

    /// Evaluates one change against the current store and directory.
    pub fn evaluate_change(&self, change: &Change) -> Result<Effect, EngineError> {
        if change.action.trim().is_empty() {
            return Err(EngineError::InvalidChange("action must not be empty".into()));
        }
        if change.object_id.is_empty() {
            return Err(EngineError::InvalidChange("object_id must not be empty".into()));
        }
        let clock = self.store.clock();
        let now = clock.now();
        let directory = self.directory.snapshot();
        let store = self.store.snapshot();

        let object = directory
            .get(&change.object_id)
            .cloned()
            .ok_or_else(|| EngineError::UnknownDevice {
                role: "object",
                id: change.object_id.clone(),
            })?;
        let subject = match &change.subject_id {
            None => Subject::App,
            Some(id) => Subject::Device(directory.get(id).cloned().ok_or_else(|| EngineError::UnknownDevice {
                role: "subject",
                id: id.clone(),
            })?),
        };
        self.metrics.change();

        let subject_record = match &subject {
            Subject::App => None,
            Subject::Device(rec) => Some(rec.as_ref()),
        };
        let candidates = self.retrieve(&store, subject_record, &change.action, &object, now);
        self.log(change, None, Stage::Retrieve, Outcome::Retrieved, format!("{} candidate policies", candidates.len()));

        let mut applicable = 0usize;
        let mut fired = Vec::new();
        let mut alerts_by_policy = Vec::new();
        for policy in &candidates {
            match self.evaluate_policy(change, policy, &subject, &object, &directory) {
                PolicyVerdict::NotApplicable => {}
                PolicyVerdict::NotFired | PolicyVerdict::Failed => applicable += 1,
                PolicyVerdict::Fired { alerts } => {
                    applicable += 1;
                    fired.push(FiredPolicy {
                        policy_id: policy.id().to_string(),
                        response: policy.spec.response,
                        priority: policy.spec.priority,
                    });
                    alerts_by_policy.push(alerts);
                }
            }
        }

        if let Some(token) = change.confirmation_token() {
            if self.redeem_token(token, change, &subject, now) {
                self.log(change, None, Stage::Confirm, Outcome::Confirmed, "double-check confirmed");
                for (f, alerts) in fired.iter_mut().zip(alerts_by_policy.iter_mut()) {
                    if f.response == ResponseType::DoubleCheck {
                        f.response = ResponseType::Approve;
                        alerts.clear();
                    }
                }
            } else {
                self.log(change, None, Stage::Confirm, Outcome::TokenRejected, "unknown, expired or mismatched token");
            }
        }

        if self.config.strict && applicable == 0 {
            fired.push(FiredPolicy {
                policy_id: STRICT_DEFAULT_POLICY_ID.to_string(),
                response: ResponseType::Deny,
                priority: LOWEST_PRIORITY,
            });
            alerts_by_policy.push(Vec::new());
        }

        let decision = aggregate_responses(&fired);
        for f in &fired {
            self.metrics.fired(f.response);
        }
        let alerts = alerts_by_policy.into_iter().flatten().collect();
        let confirmation_token = (decision == ResponseType::DoubleCheck).then(|| self.issue_token(change, &subject, now));
        self.log(change, None, Stage::Aggregate, Outcome::Decided, decision.to_string());

        Ok(Effect {
            change_id: change.change_id.clone(),
            decision,
            fired,
            alerts,
            confirmation_token,
            timestamp: now,
        })
    }

    fn selector_view(
        &self,
        selector: &DeviceSelector,
        record: Option<&DeviceRecord>,
    ) -> Result<Option<AttributeView>, String> {
        let view = match record {
            Some(rec) => rec.project(selector),
            None => AttributeView::from([("type".to_string(), Value::from(APP_SUBJECT_TYPE))]),
        };
        if !selector.matches_type(projected_type(&view)) {
            return Ok(None);
        }
        let missing: Vec<&str> = selector
            .matching_attribute
            .keys()
            .filter(|k| !view.contains_key(*k))
            .map(String::as_str)
            .collect();
        if missing.is_empty() {
            Ok(Some(view))
        } else {
            Err(format!("missing attributes: {}", missing.join(", ")))
        }
    }

    fn context_failure(&self, change: &Change, policy: &Policy, stage: Stage, detail: String) -> PolicyVerdict {
        self.metrics.context_failure();
        tracing::warn!(change = %change.change_id, policy = %policy.id(), "context unresolved: {detail}");
        self.log(change, Some(policy.id()), stage, Outcome::ContextFailure, detail);
        PolicyVerdict::Failed
    }

    fn eval_failure(&self, change: &Change, policy: &Policy, stage: Stage, err: EvalError) -> PolicyVerdict {
        match err {
            EvalError::UnknownAttribute { .. } | EvalError::UnboundRoot(_) => {
                self.context_failure(change, policy, stage, err.to_string())
            }
            other => {
                tracing::warn!(change = %change.change_id, policy = %policy.id(), "policy evaluation failed: {other}");
                self.log(change, Some(policy.id()), stage, Outcome::EvaluationError, other.to_string());
                PolicyVerdict::Failed
            }
        }
    }

    fn evaluate_policy(
        &self,
        change: &Change,
        policy: &Policy,
        subject: &Subject,
        object: &DeviceRecord,
        directory: &DirectorySnapshot,
    ) -> PolicyVerdict {
        let functions = self.store.functions();
        let not_applicable = |what: &str| {
            self.log(change, Some(policy.id()), Stage::Match, Outcome::NotApplicable, format!("{what} selector does not match"));
            PolicyVerdict::NotApplicable
        };
        if policy.key.action != normalize(&change.action) {
            self.log(change, Some(policy.id()), Stage::Match, Outcome::NotApplicable, "action differs");
            return PolicyVerdict::NotApplicable;
        }

        let subject_view = match (&policy.spec.subject_device, subject) {
            (None, _) => AttributeView::new(),
            (Some(sel), Subject::App) => match self.selector_view(sel, None) {
                Ok(Some(v)) => v,
                Ok(None) => return not_applicable(SUBJECT_ROOT),
                Err(e) => return self.context_failure(change, policy, Stage::Match, format!("{SUBJECT_ROOT}: {e}")),
            },
            (Some(sel), Subject::Device(rec)) => match self.selector_view(sel, Some(rec)) {
                Ok(Some(v)) => v,
                Ok(None) => return not_applicable(SUBJECT_ROOT),
                Err(e) => return self.context_failure(change, policy, Stage::Match, format!("{SUBJECT_ROOT}: {e}")),
            },
        };
        let object_view = match self.selector_view(&policy.spec.object_device, Some(object)) {
            Ok(Some(v)) => v,
            Ok(None) => return not_applicable(OBJECT_ROOT),
            Err(e) => return self.context_failure(change, policy, Stage::Match, format!("{OBJECT_ROOT}: {e}")),
        };

        let bound = if policy.spec.affected_device.is_empty() {
            // No affected devices: the relationship gates the policy directly.
            let bindings = binding::base_bindings(&subject_view, &object_view);
            match eval_expr(&policy.relationship, &bindings, functions) {
                Ok(v) if v.truthy() => AffectedBindings::new(),
                Ok(_) => {
                    self.log(change, Some(policy.id()), Stage::Bind, Outcome::NotFired, "relationship is false");
                    return PolicyVerdict::NotFired;
                }
                Err(e) => return self.eval_failure(change, policy, Stage::Bind, e),
            }
        } else {
            match bind_affected(policy, &subject_view, &object_view, &object.id, directory, functions) {
                Ok(outcome) => {
                    for key in &outcome.skipped {
                        self.log(
                            change,
                            Some(policy.id()),
                            Stage::Bind,
                            Outcome::RelationshipSkipped,
                            format!("relationship names another affected key; {AFFECTED_ROOT}.{key} is unfiltered"),
                        );
                    }
                    outcome.bindings
                }
                Err(e) => return self.eval_failure(change, policy, Stage::Bind, e),
            }
        };

        let matched = match evaluate_assertion(
            policy,
            &subject_view,
            &object_view,
            &bound,
            functions,
            self.config.max_combinations,
        ) {
            Ok(AssertionOutcome::Fired(matched)) => matched,
            Ok(AssertionOutcome::NotFired) => {
                self.log(change, Some(policy.id()), Stage::Assert, Outcome::NotFired, "");
                return PolicyVerdict::NotFired;
            }
            Err(AssertionError::Eval(e)) => return self.eval_failure(change, policy, Stage::Assert, e),
            Err(e @ AssertionError::TooManyCombinations(_)) => {
                tracing::warn!(change = %change.change_id, policy = %policy.id(), "{e}");
                self.log(change, Some(policy.id()), Stage::Assert, Outcome::EvaluationError, e.to_string());
                return PolicyVerdict::Failed;
            }
        };
        self.log(change, Some(policy.id()), Stage::Assert, Outcome::Fired, policy.spec.response.to_string());

        let mut alerts = Vec::new();
        if let Some(message) = &policy.spec.alert {
            let mut targets: Vec<String> = Vec::new();
            let mut push = |id: &str| {
                if !targets.iter().any(|t| t == id) {
                    targets.push(id.to_string());
                }
            };
            if policy.spec.alert_targets.is_empty() {
                push(subject.id());
            }
            for target in &policy.spec.alert_targets {
                if target == SUBJECT_ROOT {
                    push(subject.id());
                } else if target == OBJECT_ROOT {
                    push(&object.id);
                } else if let Some(key) = target.strip_prefix(AFFECTED_ROOT).and_then(|t| t.strip_prefix('.')) {
                    matched.get(key).into_iter().flatten().for_each(|id| push(id));
                }
            }
            alerts = targets
                .into_iter()
                .map(|target| Alert {
                    target,
                    message: message.clone(),
                })
                .collect();
        }
        PolicyVerdict::Fired { alerts }
    }

    fn token_for(&self, change: &Change, at: DateTime<Utc>) -> String {
        let mut h = Sha256::new();
        h.update(self.token_secret);
        h.update(change.change_id.as_bytes());
        h.update([0]);
        h.update(at.to_rfc3339().as_bytes());
        hex::encode(&h.finalize()[..16])
    }

    fn issue_token(&self, change: &Change, subject: &Subject, now: DateTime<Utc>) -> String {
        let token = self.token_for(change, now);
        let ttl = self.config.confirmation_ttl;
        let mut pending = self.pending.lock().unwrap();
        pending.retain(|_, p| now - p.issued_at < ttl);
        pending.insert(
            token.clone(),
            PendingConfirmation {
                subject: subject.id().to_string(),
                action: normalize(&change.action),
                object: change.object_id.clone(),
                issued_at: now,
            },
        );
        token
    }

    /// Consumes a token if it was issued for this subject–action–object and has not expired.
    fn redeem_token(&self, token: &str, change: &Change, subject: &Subject, now: DateTime<Utc>) -> bool {
        let mut pending = self.pending.lock().unwrap();
        let Some(p) = pending.get(token) else {
            return false;
        };
        let valid = p.subject == subject.id()
            && p.action == normalize(&change.action)
            && p.object == change.object_id
            && now - p.issued_at < self.config.confirmation_ttl;
        if valid {
            pending.remove(token);
        }
        valid
    }
}
