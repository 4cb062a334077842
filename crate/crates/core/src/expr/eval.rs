use std::collections::BTreeMap;

use thiserror::Error;

use super::ast::{BinaryOp, Expr, UnaryOp};
use super::functions::{to_set, FunctionRegistry};
use super::value::Value;

/// Simplified-keyword view of one device, as seen through a selector.
pub type AttributeView = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("type mismatch in `{op}`: {detail}")]
    TypeMismatch { op: String, detail: String },
    #[error("unknown attribute `{segment}` on `{root}`")]
    UnknownAttribute { root: String, segment: String },
    #[error("`{0}` is not bound in this evaluation")]
    UnboundRoot(String),
    #[error("unknown function `{0}`")]
    UnknownFunction(String),
    #[error("`{name}` takes {expected} argument(s), got {got}")]
    Arity { name: String, expected: String, got: usize },
    #[error("division by zero")]
    DivisionByZero,
    #[error("invalid argument to `{name}`: {detail}")]
    InvalidArgument { name: String, detail: String },
}

/// What a path root refers to during one evaluation.
#[derive(Debug, Clone, PartialEq)]
pub enum Binding {
    /// A single device (subject, object, or one EACH-quantified candidate).
    One(AttributeView),
    /// A device set; `root.attr` yields the list of every member's `attr`.
    Many(Vec<AttributeView>),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Bindings(BTreeMap<String, Binding>);

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bind(&mut self, root: impl Into<String>, binding: Binding) -> &mut Self {
        self.0.insert(root.into(), binding);
        self
    }

    pub fn with(mut self, root: impl Into<String>, binding: Binding) -> Self {
        self.bind(root, binding);
        self
    }

    pub fn get(&self, root: &str) -> Option<&Binding> {
        self.0.get(root)
    }

    pub fn contains(&self, root: &str) -> bool {
        self.0.contains_key(root)
    }
}

fn mismatch(op: BinaryOp, l: &Value, r: &Value) -> EvalError {
    EvalError::TypeMismatch {
        op: op.symbol().to_string(),
        detail: format!("{} and {}", l.kind(), r.kind()),
    }
}

/// Evaluates an expression. Pure apart from whatever registered functions do.
pub fn eval_expr(expr: &Expr, bindings: &Bindings, functions: &FunctionRegistry) -> Result<Value, EvalError> {
    match expr {
        Expr::Literal(v) => Ok(v.clone()),
        Expr::Path { root, segments } => eval_path(root, segments, bindings),
        Expr::List(items) => items
            .iter()
            .map(|e| eval_expr(e, bindings, functions))
            .collect::<Result<_, _>>()
            .map(Value::List),
        Expr::Call(name, args) => {
            if !functions.contains(name) {
                return Err(EvalError::UnknownFunction(name.clone()));
            }
            let args = args
                .iter()
                .map(|e| eval_expr(e, bindings, functions))
                .collect::<Result<Vec<_>, _>>()?;
            functions.call(name, &args)
        }
        Expr::Unary(UnaryOp::Not, e) => Ok(Value::Bool(!eval_expr(e, bindings, functions)?.truthy())),
        Expr::Unary(UnaryOp::Neg, e) => match eval_expr(e, bindings, functions)? {
            Value::Number(n) => Ok(Value::Number(-n)),
            other => Err(EvalError::TypeMismatch {
                op: "-".into(),
                detail: format!("cannot negate {}", other.kind()),
            }),
        },
        Expr::Binary(BinaryOp::And, l, r) => {
            let truthy = eval_expr(l, bindings, functions)?.truthy() && eval_expr(r, bindings, functions)?.truthy();
            Ok(Value::Bool(truthy))
        }
        Expr::Binary(BinaryOp::Or, l, r) => {
            let truthy = eval_expr(l, bindings, functions)?.truthy() || eval_expr(r, bindings, functions)?.truthy();
            Ok(Value::Bool(truthy))
        }
        Expr::Binary(op, l, r) => {
            let lv = eval_expr(l, bindings, functions)?;
            let rv = eval_expr(r, bindings, functions)?;
            apply_binary(*op, &lv, &rv)
        }
    }
}

fn eval_path(root: &str, segments: &[String], bindings: &Bindings) -> Result<Value, EvalError> {
    let binding = bindings
        .get(root)
        .ok_or_else(|| EvalError::UnboundRoot(root.to_string()))?;
    let Some((first, rest)) = segments.split_first() else {
        return Err(EvalError::TypeMismatch {
            op: root.to_string(),
            detail: "a device reference is not a value; name one of its attributes".into(),
        });
    };
    if let Some(extra) = rest.first() {
        // Attribute values are leaves; there is nothing to descend into.
        return Err(EvalError::UnknownAttribute {
            root: format!("{root}.{first}"),
            segment: extra.clone(),
        });
    }
    let lookup = |view: &AttributeView| {
        view.get(first).cloned().ok_or_else(|| EvalError::UnknownAttribute {
            root: root.to_string(),
            segment: first.clone(),
        })
    };
    match binding {
        Binding::One(view) => lookup(view),
        Binding::Many(views) => views.iter().map(lookup).collect::<Result<_, _>>().map(Value::List),
    }
}

fn apply_binary(op: BinaryOp, l: &Value, r: &Value) -> Result<Value, EvalError> {
    use std::cmp::Ordering;
    match op {
        BinaryOp::Eq | BinaryOp::Ne => {
            let equal = match (l, r) {
                (Value::Null, _) | (_, Value::Null) => l == r,
                (Value::Bool(_), Value::Bool(_))
                | (Value::Number(_), Value::Number(_))
                | (Value::Str(_), Value::Str(_))
                | (Value::Set(_), Value::Set(_))
                | (Value::List(_), Value::List(_)) => l == r,
                _ => return Err(mismatch(op, l, r)),
            };
            Ok(Value::Bool(equal == (op == BinaryOp::Eq)))
        }
        BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => {
            let ord = match (l, r) {
                (Value::Number(a), Value::Number(b)) => a.partial_cmp(b),
                (Value::Str(a), Value::Str(b)) => Some(a.cmp(b)),
                (Value::Bool(a), Value::Bool(b)) => Some(a.cmp(b)),
                _ => return Err(mismatch(op, l, r)),
            };
            // NaN compares false under every ordering operator.
            let result = ord.is_some_and(|o| match op {
                BinaryOp::Lt => o == Ordering::Less,
                BinaryOp::Le => o != Ordering::Greater,
                BinaryOp::Gt => o == Ordering::Greater,
                _ => o != Ordering::Less,
            });
            Ok(Value::Bool(result))
        }
        BinaryOp::Intersect | BinaryOp::Union => {
            if !matches!(l, Value::Set(_) | Value::List(_)) || !matches!(r, Value::Set(_) | Value::List(_)) {
                return Err(mismatch(op, l, r));
            }
            let a = to_set(op.symbol(), l)?;
            let b = to_set(op.symbol(), r)?;
            Ok(Value::Set(if op == BinaryOp::Intersect {
                a.intersection(&b).cloned().collect()
            } else {
                a.union(&b).cloned().collect()
            }))
        }
        BinaryOp::Add => match (l, r) {
            (Value::Number(a), Value::Number(b)) => Ok(Value::Number(a + b)),
            (Value::Str(a), Value::Str(b)) => Ok(Value::Str(format!("{a}{b}"))),
            _ => Err(mismatch(op, l, r)),
        },
        BinaryOp::Sub | BinaryOp::Mul | BinaryOp::Div => {
            let (Value::Number(a), Value::Number(b)) = (l, r) else {
                return Err(mismatch(op, l, r));
            };
            Ok(Value::Number(match op {
                BinaryOp::Sub => a - b,
                BinaryOp::Mul => a * b,
                _ => {
                    if *b == 0.0 {
                        return Err(EvalError::DivisionByZero);
                    }
                    a / b
                }
            }))
        }
        BinaryOp::And | BinaryOp::Or => unreachable!("short-circuit operators are handled by eval_expr"),
    }
}
