//! The management plane's outward face: the pub/sub wire format and transports, the change
//! consumer, and the admin HTTP API.

pub mod bus;
pub mod http;
pub mod mqtt;
pub mod service;
pub mod wire;

pub use bus::{Delivery, InProcessBroker, PubSub, Subscription, TransportError};
pub use mqtt::MqttPubSub;
pub use service::{effect_targets, effects_topic, Handled, PlaneService, ServiceError, ServiceStats, CHANGES_TOPIC};
pub use wire::{Message, MessageKind, WireError, WireMessage, SCHEMA_VERSION};
