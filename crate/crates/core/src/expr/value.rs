use std::collections::BTreeSet;
use std::fmt;

use ordered_float::OrderedFloat;
use serde::{Deserialize, Serialize};

/// A hashable scalar, the only thing allowed inside a [`Value::Set`].
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SetItem {
    Bool(bool),
    Number(OrderedFloat<f64>),
    Str(String),
}

impl From<SetItem> for Value {
    fn from(item: SetItem) -> Self {
        match item {
            SetItem::Bool(b) => Value::Bool(b),
            SetItem::Number(n) => Value::Number(n.into_inner()),
            SetItem::Str(s) => Value::Str(s),
        }
    }
}

/// Runtime value produced by expression evaluation and by directory lookups.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Number(f64),
    Str(String),
    Set(BTreeSet<SetItem>),
    List(Vec<Value>),
}

impl Value {
    pub fn truthy(&self) -> bool {
        match self {
            Value::Null => false,
            Value::Bool(b) => *b,
            Value::Number(n) => *n != 0.0,
            Value::Str(s) => !s.is_empty(),
            Value::Set(s) => !s.is_empty(),
            Value::List(l) => !l.is_empty(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Value::Null => "null",
            Value::Bool(_) => "boolean",
            Value::Number(_) => "number",
            Value::Str(_) => "string",
            Value::Set(_) => "set",
            Value::List(_) => "list",
        }
    }

    /// Scalar view of this value, if it can live inside a set.
    pub fn as_set_item(&self) -> Option<SetItem> {
        match self {
            Value::Bool(b) => Some(SetItem::Bool(*b)),
            Value::Number(n) => Some(SetItem::Number(OrderedFloat(*n))),
            Value::Str(s) => Some(SetItem::Str(s.clone())),
            _ => None,
        }
    }

    pub fn set_of<I, T>(items: I) -> Value
    where
        I: IntoIterator<Item = T>,
        T: Into<String>,
    {
        Value::Set(items.into_iter().map(|s| SetItem::Str(s.into())).collect())
    }

    /// Converts a JSON document node. Objects have no value representation.
    pub fn from_json(json: &serde_json::Value) -> Option<Value> {
        Some(match json {
            serde_json::Value::Null => Value::Null,
            serde_json::Value::Bool(b) => Value::Bool(*b),
            serde_json::Value::Number(n) => Value::Number(n.as_f64()?),
            serde_json::Value::String(s) => Value::Str(s.clone()),
            serde_json::Value::Array(items) => {
                Value::List(items.iter().map(Value::from_json).collect::<Option<_>>()?)
            }
            serde_json::Value::Object(_) => return None,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Value::Null => serde_json::Value::Null,
            Value::Bool(b) => serde_json::Value::Bool(*b),
            Value::Number(n) => number_to_json(*n),
            Value::Str(s) => serde_json::Value::String(s.clone()),
            Value::Set(items) => serde_json::Value::Array(
                items.iter().map(|i| Value::from(i.clone()).to_json()).collect(),
            ),
            Value::List(items) => serde_json::Value::Array(items.iter().map(Value::to_json).collect()),
        }
    }
}

fn number_to_json(n: f64) -> serde_json::Value {
    // Integral values serialize as JSON integers so documents round-trip unchanged.
    if n.fract() == 0.0 && n.abs() < 9.007_199_254_740_992e15 {
        serde_json::Value::from(n as i64)
    } else {
        serde_json::Number::from_f64(n)
            .map(serde_json::Value::Number)
            .unwrap_or(serde_json::Value::Null)
    }
}

impl Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        self.to_json().serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let json = serde_json::Value::deserialize(deserializer)?;
        Value::from_json(&json)
            .ok_or_else(|| serde::de::Error::custom("objects are not valid parameter values"))
    }
}

impl From<bool> for Value {
    fn from(b: bool) -> Self {
        Value::Bool(b)
    }
}

impl From<f64> for Value {
    fn from(n: f64) -> Self {
        Value::Number(n)
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Str(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Str(s)
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.to_json())
    }
}
