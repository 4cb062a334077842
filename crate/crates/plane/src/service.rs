//! Consumes changes from the bus, evaluates them once per change id, and publishes effects to
//! every relevant device.

use std::num::NonZeroUsize;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use lru::LruCache;
use serde::Serialize;
use thiserror::Error;

use iip_core::engine::{Change, Effect, EngineError, PolicyEngine};
use iip_core::model::APP_SUBJECT_ID;

use crate::bus::{PubSub, Subscription, TransportError};
use crate::wire::{Message, WireError};

pub const CHANGES_TOPIC: &str = "mgmt/v1/changes";
pub const EFFECTS_FILTER: &str = "mgmt/v1/effects/+";
pub const DEDUP_WINDOW: usize = 10_000;

pub fn effects_topic(device_id: &str) -> String {
    format!("mgmt/v1/effects/{device_id}")
}

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("{0:?} messages are not accepted on the change topic")]
    UnexpectedKind(crate::wire::MessageKind),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Handled {
    Evaluated { effect: Effect, targets: Vec<String> },
    Duplicate(String),
}

#[derive(Debug, Default)]
struct Counters {
    received: AtomicU64,
    evaluated: AtomicU64,
    duplicates: AtomicU64,
    rejected: AtomicU64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ServiceStats {
    pub received: u64,
    pub evaluated: u64,
    pub duplicates: u64,
    pub rejected: u64,
}

/// Devices an effect goes to: the subject, then each alert target once.
pub fn effect_targets(change: &Change, effect: &Effect) -> Vec<String> {
    let mut out = vec![change.subject_id.clone().unwrap_or_else(|| APP_SUBJECT_ID.to_string())];
    for a in &effect.alerts {
        if !out.contains(&a.target) {
            out.push(a.target.clone());
        }
    }
    out
}

pub struct PlaneService<P: PubSub> {
    engine: Arc<PolicyEngine>,
    bus: P,
    seen: Mutex<LruCache<String, ()>>,
    counters: Counters,
}

impl<P: PubSub> PlaneService<P> {
    pub fn new(engine: Arc<PolicyEngine>, bus: P) -> Self {
        Self::with_window(engine, bus, DEDUP_WINDOW)
    }

    pub fn with_window(engine: Arc<PolicyEngine>, bus: P, window: usize) -> Self {
        Self {
            engine,
            bus,
            seen: Mutex::new(LruCache::new(NonZeroUsize::new(window.max(1)).unwrap())),
            counters: Counters::default(),
        }
    }

    pub fn engine(&self) -> &Arc<PolicyEngine> {
        &self.engine
    }

    pub fn stats(&self) -> ServiceStats {
        let c = &self.counters;
        ServiceStats {
            received: c.received.load(Ordering::Relaxed),
            evaluated: c.evaluated.load(Ordering::Relaxed),
            duplicates: c.duplicates.load(Ordering::Relaxed),
            rejected: c.rejected.load(Ordering::Relaxed),
        }
    }

    /// Subscribes to the change topic. Subscribe before anything is published to it.
    pub async fn subscribe(&self) -> Result<Subscription, TransportError> {
        self.bus.subscribe(CHANGES_TOPIC).await
    }

    /// Handles deliveries until the subscription ends.
    pub async fn run(self: Arc<Self>, mut sub: Subscription) {
        while let Some(d) = sub.recv().await {
            if let Err(e) = self.handle_payload(&d.payload).await {
                tracing::warn!(topic = %d.topic, "change rejected: {e}");
            }
        }
    }

    pub async fn handle_payload(&self, payload: &[u8]) -> Result<Handled, ServiceError> {
        self.counters.received.fetch_add(1, Ordering::Relaxed);
        let result = self.handle(payload).await;
        if result.is_err() {
            self.counters.rejected.fetch_add(1, Ordering::Relaxed);
        }
        result
    }

    async fn handle(&self, payload: &[u8]) -> Result<Handled, ServiceError> {
        let change = match Message::decode(payload)? {
            Message::Change(c) | Message::Confirmation(c) => c,
            other => return Err(ServiceError::UnexpectedKind(other.kind())),
        };
        if self.seen.lock().unwrap().put(change.change_id.clone(), ()).is_some() {
            self.counters.duplicates.fetch_add(1, Ordering::Relaxed);
            tracing::debug!(change = %change.change_id, "duplicate delivery ignored");
            return Ok(Handled::Duplicate(change.change_id));
        }
        let effect = self.engine.evaluate_change(&change)?;
        self.counters.evaluated.fetch_add(1, Ordering::Relaxed);
        let targets = effect_targets(&change, &effect);
        self.publish_effect(&effect, &targets).await?;
        Ok(Handled::Evaluated { effect, targets })
    }

    pub async fn publish_effect(&self, effect: &Effect, targets: &[String]) -> Result<(), TransportError> {
        let bytes = Message::Effect(effect.clone()).encode();
        for t in targets {
            self.bus.publish(&effects_topic(t), bytes.clone()).await?;
        }
        Ok(())
    }
}

/// Client side: submit a change for evaluation.
pub async fn publish_change<P: PubSub>(bus: &P, change: &Change) -> Result<(), TransportError> {
    bus.publish(CHANGES_TOPIC, Message::Change(change.clone()).encode()).await
}

/// Client side: resubmit a confirmed change. It needs its own change id and the token.
pub async fn publish_confirmation<P: PubSub>(bus: &P, change: &Change) -> Result<(), TransportError> {
    bus.publish(CHANGES_TOPIC, Message::Confirmation(change.clone()).encode()).await
}
