//! [`PubSub`] over an MQTT 3.1.1 broker.

use std::sync::{Arc, Mutex};
use std::time::Duration;

use rumqttc::{AsyncClient, Event, MqttOptions, Packet, QoS};
use tokio::sync::mpsc;
use tokio::task::JoinHandle;

use crate::bus::{topic_matches, validate_filter, validate_topic, Delivery, PubSub, Subscription, TransportError};

type Subscribers = Arc<Mutex<Vec<(String, mpsc::Sender<Delivery>)>>>;

#[derive(Clone)]
pub struct MqttPubSub {
    client: AsyncClient,
    subscribers: Subscribers,
    capacity: usize,
}

/// Builds client options from `mqtt://host:port[?client_id=...]`.
pub fn options_from_url(url: &str) -> Result<MqttOptions, TransportError> {
    let url = if url.contains("client_id=") {
        url.to_string()
    } else {
        let sep = if url.contains('?') { '&' } else { '?' };
        format!("{url}{sep}client_id=mgmt-{}", std::process::id())
    };
    let mut opts = MqttOptions::parse_url(url).map_err(|e| TransportError::Unavailable(e.to_string()))?;
    opts.set_keep_alive(Duration::from_secs(30));
    Ok(opts)
}

impl MqttPubSub {
    /// Starts the client's event loop on the current runtime. Incoming publishes are routed to
    /// matching subscriptions; reconnects are retried after a short pause.
    pub fn connect(url: &str, capacity: usize) -> Result<(Self, JoinHandle<()>), TransportError> {
        let opts = options_from_url(url)?;
        let (client, mut eventloop) = AsyncClient::new(opts, capacity.max(10));
        let subscribers: Subscribers = Arc::new(Mutex::new(Vec::new()));
        let routes = subscribers.clone();
        let handle = tokio::spawn(async move {
            loop {
                match eventloop.poll().await {
                    Ok(Event::Incoming(Packet::Publish(p))) => {
                        let targets: Vec<_> = routes
                            .lock()
                            .unwrap()
                            .iter()
                            .filter(|(f, _)| topic_matches(f, &p.topic))
                            .map(|(_, tx)| tx.clone())
                            .collect();
                        for tx in targets {
                            let _ = tx
                                .send(Delivery {
                                    topic: p.topic.clone(),
                                    payload: p.payload.to_vec(),
                                })
                                .await;
                        }
                    }
                    Ok(_) => {}
                    Err(e) => {
                        tracing::warn!("mqtt connection error: {e}");
                        tokio::time::sleep(Duration::from_secs(1)).await;
                    }
                }
            }
        });
        Ok((
            Self {
                client,
                subscribers,
                capacity: capacity.max(1),
            },
            handle,
        ))
    }
}

impl PubSub for MqttPubSub {
    async fn publish(&self, topic: &str, payload: Vec<u8>) -> Result<(), TransportError> {
        validate_topic(topic)?;
        self.client
            .publish(topic, QoS::AtLeastOnce, false, payload)
            .await
            .map_err(|e| TransportError::Unavailable(e.to_string()))
    }

    async fn subscribe(&self, filter: &str) -> Result<Subscription, TransportError> {
        validate_filter(filter)?;
        let (tx, rx) = mpsc::channel(self.capacity);
        self.subscribers.lock().unwrap().push((filter.to_string(), tx));
        self.client
            .subscribe(filter, QoS::AtLeastOnce)
            .await
            .map_err(|e| TransportError::Unavailable(e.to_string()))?;
        Ok(Subscription::new(rx))
    }
}
