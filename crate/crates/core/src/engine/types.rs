use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::expr::Value;
use crate::model::ResponseType;

/// Parameter a subject sets when resubmitting a change it has confirmed.
pub const CONFIRMATION_TOKEN_PARAM: &str = "confirmation_token";

/// A runtime subject–action–object event from the operation plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Change {
    pub change_id: String,
    /// Absent means the built-in application subject.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_id: Option<String>,
    pub action: String,
    pub object_id: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, Value>,
    #[serde(default = "Utc::now")]
    pub timestamp: DateTime<Utc>,
}

impl Change {
    pub fn new(change_id: &str, subject_id: Option<&str>, action: &str, object_id: &str) -> Self {
        Self {
            change_id: change_id.to_string(),
            subject_id: subject_id.map(str::to_string),
            action: action.to_string(),
            object_id: object_id.to_string(),
            parameters: BTreeMap::new(),
            timestamp: Utc::now(),
        }
    }

    pub fn confirmation_token(&self) -> Option<&str> {
        match self.parameters.get(CONFIRMATION_TOKEN_PARAM) {
            Some(Value::Str(t)) => Some(t),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FiredPolicy {
    pub policy_id: String,
    pub response: ResponseType,
    pub priority: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Alert {
    /// Device id, or `app` for the application subject.
    pub target: String,
    pub message: String,
}

/// The engine's verdict on one change.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub change_id: String,
    pub decision: ResponseType,
    /// Fired policies ordered by (priority, id).
    pub fired: Vec<FiredPolicy>,
    pub alerts: Vec<Alert>,
    /// Present on DOUBLE_CHECK decisions; echo it back to confirm.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confirmation_token: Option<String>,
    pub timestamp: DateTime<Utc>,
}
