use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::sync::Arc;

use super::eval::EvalError;
use super::value::{SetItem, Value};
use crate::clock::{Clock, SystemClock};

pub type NativeFn = Arc<dyn Fn(&[Value]) -> Result<Value, EvalError> + Send + Sync>;

/// Functions that reduce a collection; applying them to a per-device binding needs a SET quantifier.
pub const AGGREGATE_FUNCTIONS: &[&str] = &["sum", "count", "min", "max", "len"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Arity {
    Exact(usize),
    Range(usize, usize),
}

impl Arity {
    pub fn accepts(self, n: usize) -> bool {
        match self {
            Arity::Exact(k) => n == k,
            Arity::Range(lo, hi) => (lo..=hi).contains(&n),
        }
    }
}

impl fmt::Display for Arity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Arity::Exact(k) => write!(f, "{k}"),
            Arity::Range(lo, hi) => write!(f, "{lo}..={hi}"),
        }
    }
}

#[derive(Clone)]
pub struct FunctionDef {
    pub arity: Arity,
    func: NativeFn,
}

/// Named functions callable from policy expressions: the built-ins plus whatever
/// the host registers (time, weather, external APIs).
#[derive(Clone)]
pub struct FunctionRegistry {
    fns: HashMap<String, FunctionDef>,
}

impl fmt::Debug for FunctionRegistry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut names: Vec<_> = self.fns.keys().collect();
        names.sort();
        f.debug_struct("FunctionRegistry").field("functions", &names).finish()
    }
}

impl Default for FunctionRegistry {
    fn default() -> Self {
        Self::with_builtins(Arc::new(SystemClock))
    }
}

impl FunctionRegistry {
    pub fn empty() -> Self {
        Self { fns: HashMap::new() }
    }

    /// Built-ins, with `now()` reading the given clock.
    pub fn with_builtins(clock: Arc<dyn Clock>) -> Self {
        let mut reg = Self::empty();
        reg.register("set", Arity::Exact(1), |args| to_set("set", &args[0]).map(Value::Set));
        reg.register("len", Arity::Exact(1), |args| match &args[0] {
            Value::List(l) => Ok(Value::Number(l.len() as f64)),
            Value::Set(s) => Ok(Value::Number(s.len() as f64)),
            Value::Str(s) => Ok(Value::Number(s.chars().count() as f64)),
            other => Err(mismatch("len", format!("expected list, set or string, got {}", other.kind()))),
        });
        reg.register("sum", Arity::Exact(1), |args| {
            numbers("sum", &args[0]).map(|ns| Value::Number(ns.iter().sum()))
        });
        reg.register("count", Arity::Exact(1), |args| {
            elements("count", &args[0]).map(|items| {
                Value::Number(items.iter().filter(|v| v.truthy()).count() as f64)
            })
        });
        reg.register("min", Arity::Exact(1), |args| extremum("min", &args[0], f64::min));
        reg.register("max", Arity::Exact(1), |args| extremum("max", &args[0], f64::max));
        reg.register("contains", Arity::Exact(2), |args| contains(&args[0], &args[1]).map(Value::Bool));
        reg.register("now", Arity::Exact(0), move |_| {
            Ok(Value::Number(clock.now().timestamp_millis() as f64 / 1000.0))
        });
        reg
    }

    /// Adds or replaces a function.
    pub fn register<F>(&mut self, name: &str, arity: Arity, func: F)
    where
        F: Fn(&[Value]) -> Result<Value, EvalError> + Send + Sync + 'static,
    {
        self.fns.insert(
            name.to_string(),
            FunctionDef {
                arity,
                func: Arc::new(func),
            },
        );
    }

    pub fn get(&self, name: &str) -> Option<&FunctionDef> {
        self.fns.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.fns.contains_key(name)
    }

    pub fn call(&self, name: &str, args: &[Value]) -> Result<Value, EvalError> {
        let def = self
            .fns
            .get(name)
            .ok_or_else(|| EvalError::UnknownFunction(name.to_string()))?;
        if !def.arity.accepts(args.len()) {
            return Err(EvalError::Arity {
                name: name.to_string(),
                expected: def.arity.to_string(),
                got: args.len(),
            });
        }
        (def.func)(args)
    }
}

fn mismatch(op: &str, detail: String) -> EvalError {
    EvalError::TypeMismatch {
        op: op.to_string(),
        detail,
    }
}

/// Coerces a list or set to a set of scalars.
pub(crate) fn to_set(op: &str, v: &Value) -> Result<BTreeSet<SetItem>, EvalError> {
    match v {
        Value::Set(s) => Ok(s.clone()),
        Value::List(items) => items
            .iter()
            .map(|i| {
                i.as_set_item()
                    .ok_or_else(|| mismatch(op, format!("set members must be scalars, got {}", i.kind())))
            })
            .collect(),
        other => Err(mismatch(op, format!("expected list or set, got {}", other.kind()))),
    }
}

fn elements(op: &str, v: &Value) -> Result<Vec<Value>, EvalError> {
    match v {
        Value::List(items) => Ok(items.clone()),
        Value::Set(s) => Ok(s.iter().cloned().map(Value::from).collect()),
        other => Err(mismatch(op, format!("expected list or set, got {}", other.kind()))),
    }
}

fn numbers(op: &str, v: &Value) -> Result<Vec<f64>, EvalError> {
    elements(op, v)?
        .into_iter()
        .map(|item| match item {
            Value::Number(n) => Ok(n),
            other => Err(mismatch(op, format!("expected numbers, got {}", other.kind()))),
        })
        .collect()
}

fn extremum(op: &str, v: &Value, pick: fn(f64, f64) -> f64) -> Result<Value, EvalError> {
    let ns = numbers(op, v)?;
    ns.into_iter()
        .reduce(pick)
        .map(Value::Number)
        .ok_or_else(|| EvalError::InvalidArgument {
            name: op.to_string(),
            detail: "empty collection".into(),
        })
}

fn contains(coll: &Value, item: &Value) -> Result<bool, EvalError> {
    match (coll, item) {
        (Value::Str(hay), Value::Str(needle)) => Ok(hay.contains(needle.as_str())),
        (Value::Str(_), other) => Err(mismatch("contains", format!("cannot search a string for {}", other.kind()))),
        (Value::List(items), _) => Ok(items.iter().any(|i| i == item)),
        (Value::Set(s), _) => Ok(item.as_set_item().is_some_and(|k| s.contains(&k))),
        (other, _) => Err(mismatch("contains", format!("expected collection, got {}", other.kind()))),
    }
}
