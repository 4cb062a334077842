//! The pub/sub envelope: `{schema_version, kind, payload, ...}`. Fields this version does not
//! know are kept and re-emitted.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use iip_core::engine::{Change, Effect, CONFIRMATION_TOKEN_PARAM};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum MessageKind {
    Change,
    Effect,
    Confirmation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub schema_version: u32,
    pub kind: MessageKind,
    pub payload: serde_json::Value,
    #[serde(flatten)]
    pub extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Change(Change),
    Effect(Effect),
    /// A resubmitted change carrying the confirmation token of an earlier DOUBLE_CHECK.
    Confirmation(Change),
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("unsupported schema_version {found}; this build speaks {SCHEMA_VERSION}")]
    UnsupportedVersion { found: u32 },
    #[error("{kind:?} payload does not match its schema: {detail}")]
    Payload { kind: MessageKind, detail: String },
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::Change(_) => MessageKind::Change,
            Message::Effect(_) => MessageKind::Effect,
            Message::Confirmation(_) => MessageKind::Confirmation,
        }
    }

    pub fn to_wire(&self) -> WireMessage {
        let payload = match self {
            Message::Change(c) | Message::Confirmation(c) => serde_json::to_value(c),
            Message::Effect(e) => serde_json::to_value(e),
        }
        .expect("domain types serialize");
        WireMessage {
            schema_version: SCHEMA_VERSION,
            kind: self.kind(),
            payload,
            extra: BTreeMap::new(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        serde_json::to_vec(&self.to_wire()).expect("wire messages serialize")
    }

    pub fn decode(bytes: &[u8]) -> Result<Message, WireError> {
        let wire: WireMessage = serde_json::from_slice(bytes).map_err(|e| WireError::Malformed(e.to_string()))?;
        Message::from_wire(wire)
    }

    pub fn from_wire(wire: WireMessage) -> Result<Message, WireError> {
        if wire.schema_version != SCHEMA_VERSION {
            return Err(WireError::UnsupportedVersion {
                found: wire.schema_version,
            });
        }
        let bad = |e: serde_json::Error| WireError::Payload {
            kind: wire.kind,
            detail: e.to_string(),
        };
        Ok(match wire.kind {
            MessageKind::Change => Message::Change(serde_json::from_value(wire.payload.clone()).map_err(bad)?),
            MessageKind::Effect => Message::Effect(serde_json::from_value(wire.payload.clone()).map_err(bad)?),
            MessageKind::Confirmation => {
                let change: Change = serde_json::from_value(wire.payload.clone()).map_err(bad)?;
                if change.confirmation_token().is_none() {
                    return Err(WireError::Payload {
                        kind: wire.kind,
                        detail: format!("missing string parameter `{CONFIRMATION_TOKEN_PARAM}`"),
                    });
                }
                Message::Confirmation(change)
            }
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use iip_core::expr::Value;

    #[test]
    fn change_round_trip_and_unknown_fields() {
        let c = Change::new("c1", None, "turn on", "heater-7");
        let bytes = Message::Change(c.clone()).encode();
        assert_eq!(Message::decode(&bytes).unwrap(), Message::Change(c));

        let text = r#"{"schema_version":1,"kind":"CHANGE","trace_id":"abc",
            "payload":{"change_id":"c2","action":"turn on","object_id":"h","timestamp":"2025-01-01T00:00:00Z"}}"#;
        let wire: WireMessage = serde_json::from_str(text).unwrap();
        assert_eq!(wire.extra["trace_id"], "abc");
        let back = serde_json::to_value(&wire).unwrap();
        assert_eq!(back["trace_id"], "abc");
        assert!(matches!(Message::from_wire(wire).unwrap(), Message::Change(_)));
    }

    #[test]
    fn rejects_bad_envelopes() {
        let cases = [
            r#"{"kind":"CHANGE","payload":{}}"#,
            r#"{"schema_version":2,"kind":"CHANGE","payload":{}}"#,
            r#"{"schema_version":1,"kind":"GOSSIP","payload":{}}"#,
            r#"{"schema_version":1,"kind":"CHANGE","payload":{"change_id":"x"}}"#,
            r#"{"schema_version":1,"kind":"CONFIRMATION","payload":{"change_id":"x","action":"a","object_id":"o"}}"#,
            "not json",
        ];
        for c in cases {
            assert!(Message::decode(c.as_bytes()).is_err(), "{c}");
        }
        assert!(matches!(
            Message::decode(cases[1].as_bytes()),
            Err(WireError::UnsupportedVersion { found: 2 })
        ));
    }

    #[test]
    fn confirmation_needs_token() {
        let mut c = Change::new("c9", Some("phone"), "turn on", "heater-7");
        c.parameters.insert(CONFIRMATION_TOKEN_PARAM.into(), Value::from("tok"));
        let bytes = Message::Confirmation(c.clone()).encode();
        assert_eq!(Message::decode(&bytes).unwrap(), Message::Confirmation(c));
    }
}
