use std::fmt;

use super::value::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Not,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Intersect,
    Union,
    Add,
    Sub,
    Mul,
    Div,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Or => "or",
            BinaryOp::And => "and",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::Intersect => "&",
            BinaryOp::Union => "|",
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
        }
    }

    /// Binding strength, loosest first.
    pub fn precedence(self) -> u8 {
        match self {
            BinaryOp::Or => PREC_OR,
            BinaryOp::And => PREC_AND,
            BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge => {
                PREC_CMP
            }
            BinaryOp::Intersect | BinaryOp::Union => PREC_SET,
            BinaryOp::Add | BinaryOp::Sub => PREC_ADD,
            BinaryOp::Mul | BinaryOp::Div => PREC_MUL,
        }
    }

    pub fn is_comparison(self) -> bool {
        self.precedence() == PREC_CMP
    }
}

pub(crate) const PREC_OR: u8 = 1;
pub(crate) const PREC_AND: u8 = 2;
pub(crate) const PREC_NOT: u8 = 3;
pub(crate) const PREC_CMP: u8 = 4;
pub(crate) const PREC_SET: u8 = 5;
pub(crate) const PREC_ADD: u8 = 6;
pub(crate) const PREC_MUL: u8 = 7;
pub(crate) const PREC_NEG: u8 = 8;
pub(crate) const PREC_ATOM: u8 = 9;

/// Parsed `relationship` / `assertion` expression.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Literal(Value),
    /// `root.seg.seg`; for `affectedDevice.<key>.…` the root is `affectedDevice.<key>`.
    Path { root: String, segments: Vec<String> },
    /// `[a, b, …]`
    List(Vec<Expr>),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
}

impl Expr {
    pub fn path(root: &str, segments: &[&str]) -> Expr {
        Expr::Path {
            root: root.to_string(),
            segments: segments.iter().map(|s| s.to_string()).collect(),
        }
    }

    pub fn binary(op: BinaryOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Binary(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn unary(op: UnaryOp, operand: Expr) -> Expr {
        Expr::Unary(op, Box::new(operand))
    }

    pub fn call(name: &str, args: Vec<Expr>) -> Expr {
        Expr::Call(name.to_string(), args)
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(op, ..) => op.precedence(),
            Expr::Unary(UnaryOp::Not, _) => PREC_NOT,
            Expr::Unary(UnaryOp::Neg, _) => PREC_NEG,
            _ => PREC_ATOM,
        }
    }

    /// Number of nodes on the longest root-to-leaf chain.
    pub fn depth(&self) -> usize {
        1 + match self {
            Expr::Literal(_) | Expr::Path { .. } => 0,
            Expr::Unary(_, e) => e.depth(),
            Expr::Binary(_, l, r) => l.depth().max(r.depth()),
            Expr::List(items) | Expr::Call(_, items) => items.iter().map(Expr::depth).max().unwrap_or(0),
        }
    }

    /// Pre-order traversal.
    pub fn walk<'a>(&'a self, visit: &mut impl FnMut(&'a Expr)) {
        visit(self);
        match self {
            Expr::Literal(_) | Expr::Path { .. } => {}
            Expr::Unary(_, e) => e.walk(visit),
            Expr::Binary(_, l, r) => {
                l.walk(visit);
                r.walk(visit);
            }
            Expr::List(items) | Expr::Call(_, items) => items.iter().for_each(|e| e.walk(visit)),
        }
    }

    /// Distinct path roots referenced anywhere in the expression.
    pub fn roots(&self) -> Vec<&str> {
        let mut roots = Vec::new();
        self.walk(&mut |e| {
            if let Expr::Path { root, .. } = e {
                if !roots.contains(&root.as_str()) {
                    roots.push(root.as_str());
                }
            }
        });
        roots
    }

    fn fmt_child(&self, f: &mut fmt::Formatter<'_>, parens: bool) -> fmt::Result {
        if parens {
            write!(f, "({self})")
        } else {
            write!(f, "{self}")
        }
    }
}

fn fmt_literal(value: &Value, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match value {
        Value::Null => f.write_str("None"),
        Value::Bool(true) => f.write_str("True"),
        Value::Bool(false) => f.write_str("False"),
        Value::Number(n) => write!(f, "{n:?}"),
        Value::Str(s) => {
            f.write_str("\"")?;
            for c in s.chars() {
                match c {
                    '"' => f.write_str("\\\"")?,
                    '\\' => f.write_str("\\\\")?,
                    '\n' => f.write_str("\\n")?,
                    '\t' => f.write_str("\\t")?,
                    '\r' => f.write_str("\\r")?,
                    c => write!(f, "{c}")?,
                }
            }
            f.write_str("\"")
        }
        Value::List(items) => {
            f.write_str("[")?;
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                fmt_literal(item, f)?;
            }
            f.write_str("]")
        }
        Value::Set(items) => {
            f.write_str("set([")?;
            for (i, item) in items.iter().enumerate() {
                if i > 0 {
                    f.write_str(", ")?;
                }
                fmt_literal(&Value::from(item.clone()), f)?;
            }
            f.write_str("])")
        }
    }
}

/// Prints source text that parses back to the same tree, using the minimum parentheses.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Literal(v) => fmt_literal(v, f),
            Expr::Path { root, segments } => {
                f.write_str(root)?;
                for s in segments {
                    write!(f, ".{s}")?;
                }
                Ok(())
            }
            Expr::List(items) => {
                f.write_str("[")?;
                for (i, item) in items.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{item}")?;
                }
                f.write_str("]")
            }
            Expr::Call(name, args) => {
                write!(f, "{name}(")?;
                for (i, arg) in args.iter().enumerate() {
                    if i > 0 {
                        f.write_str(", ")?;
                    }
                    write!(f, "{arg}")?;
                }
                f.write_str(")")
            }
            Expr::Unary(UnaryOp::Not, e) => {
                f.write_str("not ")?;
                e.fmt_child(f, e.precedence() < PREC_NOT)
            }
            Expr::Unary(UnaryOp::Neg, e) => {
                f.write_str("-")?;
                e.fmt_child(f, e.precedence() < PREC_NEG)
            }
            Expr::Binary(op, l, r) => {
                let prec = op.precedence();
                // Left-associative; comparisons do not chain.
                let left_parens = if op.is_comparison() {
                    l.precedence() <= prec
                } else {
                    l.precedence() < prec
                };
                l.fmt_child(f, left_parens)?;
                write!(f, " {} ", op.symbol())?;
                r.fmt_child(f, r.precedence() <= prec)
            }
        }
    }
}
