use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::model::ResponseType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Retrieve,
    Match,
    Bind,
    Assert,
    Confirm,
    Aggregate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Retrieved,
    NotApplicable,
    NotFired,
    Fired,
    /// The policy needs context the directory lacks.
    ContextFailure,
    /// The policy's expressions do not type-check against the context.
    EvaluationError,
    RelationshipSkipped,
    Confirmed,
    TokenRejected,
    Decided,
}

/// One line of the engine log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub change_id: String,
    pub policy_id: Option<String>,
    pub stage: Stage,
    pub outcome: Outcome,
    pub detail: String,
}

pub trait EngineLog: Send + Sync {
    fn record(&self, record: LogRecord);
}

#[derive(Debug, Default)]
pub struct NullLog;

impl EngineLog for NullLog {
    fn record(&self, _: LogRecord) {}
}

#[derive(Debug, Default)]
pub struct MemoryLog(Mutex<Vec<LogRecord>>);

impl MemoryLog {
    pub fn records(&self) -> Vec<LogRecord> {
        self.0.lock().unwrap().clone()
    }
}

impl EngineLog for MemoryLog {
    fn record(&self, record: LogRecord) {
        self.0.lock().unwrap().push(record);
    }
}

/// Newline-delimited JSON.
pub struct JsonLinesLog<W: Write + Send>(Mutex<W>);

impl<W: Write + Send> JsonLinesLog<W> {
    pub fn new(writer: W) -> Self {
        Self(Mutex::new(writer))
    }

    pub fn into_inner(self) -> W {
        self.0.into_inner().unwrap()
    }
}

impl<W: Write + Send> EngineLog for JsonLinesLog<W> {
    fn record(&self, record: LogRecord) {
        let mut w = self.0.lock().unwrap();
        let mut line = serde_json::to_vec(&record).expect("log records serialize");
        line.push(b'\n');
        if let Err(e) = w.write_all(&line) {
            tracing::error!("engine log write failed: {e}");
        }
    }
}

#[derive(Debug, Default)]
pub struct Metrics {
    changes_total: AtomicU64,
    fired_total: [AtomicU64; 6],
    context_failures_total: AtomicU64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub changes_total: u64,
    pub fired_total: BTreeMap<String, u64>,
    pub context_failures_total: u64,
}

impl Metrics {
    pub(crate) fn change(&self) {
        self.changes_total.fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn fired(&self, response: ResponseType) {
        self.fired_total[response as usize].fetch_add(1, Ordering::Relaxed);
    }

    pub(crate) fn context_failure(&self) {
        self.context_failures_total.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        MetricsSnapshot {
            changes_total: self.changes_total.load(Ordering::Relaxed),
            fired_total: ResponseType::ALL
                .iter()
                .map(|r| (r.to_string(), self.fired_total[*r as usize].load(Ordering::Relaxed)))
                .collect(),
            context_failures_total: self.context_failures_total.load(Ordering::Relaxed),
        }
    }
}
