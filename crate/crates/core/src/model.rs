//! Identity-independent policy documents.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::expr::{parse_expr, Expr, SyntaxError, AFFECTED_ROOT};

pub const SUBJECT_ROOT: &str = "subjectDevice";
pub const OBJECT_ROOT: &str = "objectDevice";
pub const WILDCARD: &str = "*";
pub const DEFAULT_PRIORITY: u8 = 6;
pub const LOWEST_PRIORITY: u8 = 9;

/// Type of the built-in application subject used when a change names no subject device.
pub const APP_SUBJECT_TYPE: &str = "app";
/// Device id effects use to address the built-in application subject.
pub const APP_SUBJECT_ID: &str = "app";

/// Picks devices by type and maps ontology paths onto short keywords.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct DeviceSelector {
    #[serde(rename = "type")]
    pub device_type: String,
    #[serde(default)]
    pub matching_attribute: BTreeMap<String, String>,
}

impl DeviceSelector {
    pub fn new(device_type: &str) -> Self {
        Self {
            device_type: device_type.to_string(),
            matching_attribute: BTreeMap::new(),
        }
    }

    pub fn attr(mut self, keyword: &str, path: &str) -> Self {
        self.matching_attribute.insert(keyword.to_string(), path.to_string());
        self
    }

    pub fn is_wildcard(&self) -> bool {
        self.device_type == WILDCARD
    }

    /// Ontology path of the `type` keyword, if mapped.
    pub fn type_path(&self) -> Option<&str> {
        self.matching_attribute.get("type").map(String::as_str)
    }

    pub fn matches_type(&self, projected: Option<&str>) -> bool {
        self.is_wildcard() || projected.is_some_and(|t| t.eq_ignore_ascii_case(&self.device_type))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub enum Quantifier {
    /// Bind one candidate at a time; the assertion fires if any combination holds.
    #[default]
    Each,
    /// Bind the whole matched list at once, for aggregates.
    Set,
}

impl Serialize for Quantifier {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(match self {
            Quantifier::Each => "EACH",
            Quantifier::Set => "SET",
        })
    }
}

impl<'de> Deserialize<'de> for Quantifier {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(d)?;
        match raw.to_ascii_uppercase().as_str() {
            "EACH" => Ok(Quantifier::Each),
            "SET" => Ok(Quantifier::Set),
            _ => Err(serde::de::Error::custom(format!("unknown quantifier `{raw}` (expected EACH or SET)"))),
        }
    }
}

/// One `affectedDevice` entry. Serialized flat: the selector fields plus an optional `quantifier`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "RawAffected", into = "RawAffected")]
pub struct AffectedSelector {
    pub selector: DeviceSelector,
    pub quantifier: Quantifier,
}

impl AffectedSelector {
    pub fn each(selector: DeviceSelector) -> Self {
        Self {
            selector,
            quantifier: Quantifier::Each,
        }
    }

    pub fn set(selector: DeviceSelector) -> Self {
        Self {
            selector,
            quantifier: Quantifier::Set,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct RawAffected {
    #[serde(rename = "type")]
    device_type: String,
    #[serde(default)]
    matching_attribute: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "is_each")]
    quantifier: Quantifier,
}

fn is_each(q: &Quantifier) -> bool {
    *q == Quantifier::Each
}

impl From<RawAffected> for AffectedSelector {
    fn from(raw: RawAffected) -> Self {
        Self {
            selector: DeviceSelector {
                device_type: raw.device_type,
                matching_attribute: raw.matching_attribute,
            },
            quantifier: raw.quantifier,
        }
    }
}

impl From<AffectedSelector> for RawAffected {
    fn from(a: AffectedSelector) -> Self {
        Self {
            device_type: a.selector.device_type,
            matching_attribute: a.selector.matching_attribute,
            quantifier: a.quantifier,
        }
    }
}

/// What the management plane does when a policy fires.
///
/// `Ord` follows severity: `Approve < Notify < Warn < DoubleCheck < Override < Deny`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ResponseType {
    Approve,
    Notify,
    Warn,
    DoubleCheck,
    Override,
    Deny,
}

impl ResponseType {
    pub const ALL: [ResponseType; 6] = [
        ResponseType::Approve,
        ResponseType::Notify,
        ResponseType::Warn,
        ResponseType::DoubleCheck,
        ResponseType::Override,
        ResponseType::Deny,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResponseType::Approve => "APPROVE",
            ResponseType::Notify => "NOTIFY",
            ResponseType::Warn => "WARN",
            ResponseType::DoubleCheck => "DOUBLE_CHECK",
            ResponseType::Override => "OVERRIDE",
            ResponseType::Deny => "DENY",
        }
    }

    pub fn severity(self) -> u8 {
        self as u8
    }
}

impl fmt::Display for ResponseType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown response type `{0}`")]
pub struct UnknownResponse(String);

impl FromStr for ResponseType {
    type Err = UnknownResponse;

    /// Accepts `DOUBLE_CHECK`, `Double Check`, `double-check`, `DoubleCheck`, ...
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, ' ' | '_' | '-'))
            .collect::<String>()
            .to_ascii_uppercase();
        Ok(match norm.as_str() {
            "APPROVE" => ResponseType::Approve,
            "DENY" => ResponseType::Deny,
            "OVERRIDE" => ResponseType::Override,
            "DOUBLECHECK" => ResponseType::DoubleCheck,
            "WARN" | "WARNING" => ResponseType::Warn,
            "NOTIFY" => ResponseType::Notify,
            _ => return Err(UnknownResponse(s.to_string())),
        })
    }
}

impl Serialize for ResponseType {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for ResponseType {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

/// A policy as authored: one JSON document, field names as in the policy file format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct PolicySpec {
    pub id: String,
    #[serde(default)]
    pub description: String,
    /// Free-form category tag. Stored, never interpreted.
    #[serde(rename = "type", default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub subject_device: Option<DeviceSelector>,
    pub action: String,
    pub object_device: DeviceSelector,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub affected_device: BTreeMap<String, AffectedSelector>,
    pub relationship: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assertion: Option<String>,
    pub response: ResponseType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expiration: Option<DateTime<Utc>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alert: Option<String>,
    /// Where `alert` is routed: `subjectDevice`, `objectDevice` or `affectedDevice.<key>`.
    /// Empty means the subject.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub alert_targets: Vec<String>,
    #[serde(default = "default_priority")]
    pub priority: u8,
}

fn default_priority() -> u8 {
    DEFAULT_PRIORITY
}

impl PolicySpec {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    /// Reads either a single policy document or a JSON array bundle.
    pub fn bundle_from_json(text: &str) -> serde_json::Result<Vec<Self>> {
        match serde_json::from_str::<serde_json::Value>(text)? {
            v @ serde_json::Value::Array(_) => serde_json::from_value(v),
            v => Ok(vec![serde_json::from_value(v)?]),
        }
    }

    pub fn parse_relationship(&self) -> Result<Expr, SyntaxError> {
        parse_expr(&self.relationship)
    }

    pub fn parse_assertion(&self) -> Option<Result<Expr, SyntaxError>> {
        self.assertion.as_deref().map(parse_expr)
    }

    pub fn affected_root(key: &str) -> String {
        format!("{AFFECTED_ROOT}.{key}")
    }
}
