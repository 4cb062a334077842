//! The publish/subscribe contract and its in-process implementation.

use std::future::Future;
use std::sync::{Arc, Mutex};

use thiserror::Error;
use tokio::sync::mpsc;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("transport unavailable: {0}")]
    Unavailable(String),
    #[error("invalid topic or filter `{0}`")]
    InvalidTopic(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Delivery {
    pub topic: String,
    pub payload: Vec<u8>,
}

pub struct Subscription {
    rx: mpsc::Receiver<Delivery>,
}

impl Subscription {
    pub fn new(rx: mpsc::Receiver<Delivery>) -> Self {
        Self { rx }
    }

    /// Next delivery; `None` once the transport has shut down.
    pub async fn recv(&mut self) -> Option<Delivery> {
        self.rx.recv().await
    }

    pub fn try_recv(&mut self) -> Option<Delivery> {
        self.rx.try_recv().ok()
    }
}

/// At-least-once topic pub/sub with MQTT-style filters (`+` one level, `#` the rest).
/// Deliveries to one subscriber keep publish order.
pub trait PubSub: Clone + Send + Sync + 'static {
    fn publish(&self, topic: &str, payload: Vec<u8>) -> impl Future<Output = Result<(), TransportError>> + Send;
    fn subscribe(&self, filter: &str) -> impl Future<Output = Result<Subscription, TransportError>> + Send;
}

pub fn validate_topic(topic: &str) -> Result<(), TransportError> {
    if topic.is_empty() || topic.contains(['+', '#']) {
        return Err(TransportError::InvalidTopic(topic.into()));
    }
    Ok(())
}

pub fn validate_filter(filter: &str) -> Result<(), TransportError> {
    let levels: Vec<&str> = filter.split('/').collect();
    let ok = !filter.is_empty()
        && levels.iter().enumerate().all(|(i, l)| match *l {
            "#" => i == levels.len() - 1,
            "+" => true,
            l => !l.contains(['+', '#']),
        });
    if ok {
        Ok(())
    } else {
        Err(TransportError::InvalidTopic(filter.into()))
    }
}

pub fn topic_matches(filter: &str, topic: &str) -> bool {
    let mut f = filter.split('/');
    let mut t = topic.split('/');
    loop {
        match (f.next(), t.next()) {
            (Some("#"), _) => return true,
            (Some("+"), Some(_)) => {}
            (Some(a), Some(b)) if a == b => {}
            (None, None) => return true,
            _ => return false,
        }
    }
}

type Subscribers = Vec<(String, mpsc::Sender<Delivery>)>;

/// A broker living inside the process. Each subscriber has a bounded queue; a full queue makes
/// `publish` wait rather than drop.
#[derive(Clone)]
pub struct InProcessBroker {
    subscribers: Arc<Mutex<Subscribers>>,
    capacity: usize,
}

impl Default for InProcessBroker {
    fn default() -> Self {
        Self::new(1024)
    }
}

impl InProcessBroker {
    pub fn new(capacity: usize) -> Self {
        Self {
            subscribers: Arc::new(Mutex::new(Vec::new())),
            capacity: capacity.max(1),
        }
    }

    pub fn subscriber_count(&self) -> usize {
        self.subscribers.lock().unwrap().len()
    }
}

impl PubSub for InProcessBroker {
    async fn publish(&self, topic: &str, payload: Vec<u8>) -> Result<(), TransportError> {
        validate_topic(topic)?;
        let targets: Vec<mpsc::Sender<Delivery>> = self
            .subscribers
            .lock()
            .unwrap()
            .iter()
            .filter(|(f, _)| topic_matches(f, topic))
            .map(|(_, tx)| tx.clone())
            .collect();
        let mut closed = false;
        for tx in targets {
            let d = Delivery {
                topic: topic.to_string(),
                payload: payload.clone(),
            };
            closed |= tx.send(d).await.is_err();
        }
        if closed {
            self.subscribers.lock().unwrap().retain(|(_, tx)| !tx.is_closed());
        }
        Ok(())
    }

    async fn subscribe(&self, filter: &str) -> Result<Subscription, TransportError> {
        validate_filter(filter)?;
        let (tx, rx) = mpsc::channel(self.capacity);
        self.subscribers.lock().unwrap().push((filter.to_string(), tx));
        Ok(Subscription::new(rx))
    }
}
