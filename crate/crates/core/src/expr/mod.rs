//! The policy expression language used by `relationship` and `assertion`.
//!
//! A small, side-effect-free DSL: boolean logic, comparisons, arithmetic,
//! set algebra over attribute lists, and calls into a [`FunctionRegistry`].

mod ast;
mod eval;
mod functions;
mod parser;
mod value;

pub use ast::{BinaryOp, Expr, UnaryOp};
pub use eval::{eval_expr, AttributeView, Binding, Bindings, EvalError};
pub use functions::{Arity, FunctionDef, FunctionRegistry, NativeFn, AGGREGATE_FUNCTIONS};
pub use parser::{parse_expr, SyntaxError, AFFECTED_ROOT};
pub use value::{SetItem, Value};
