//! A reference interpreter written against its own AST and value type.
//!
//! It deliberately shares nothing with the main evaluator: expressions are built as [`GExpr`]
//! trees, rendered to source for the main parser, and evaluated here directly.

use std::cmp::Ordering;
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GOp {
    Or,
    And,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Inter,
    Union,
    Add,
    Sub,
    Mul,
    Div,
}

impl GOp {
    pub fn symbol(self) -> &'static str {
        match self {
            GOp::Or => "or",
            GOp::And => "and",
            GOp::Eq => "==",
            GOp::Ne => "!=",
            GOp::Lt => "<",
            GOp::Le => "<=",
            GOp::Gt => ">",
            GOp::Ge => ">=",
            GOp::Inter => "&",
            GOp::Union => "|",
            GOp::Add => "+",
            GOp::Sub => "-",
            GOp::Mul => "*",
            GOp::Div => "/",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum GExpr {
    Null,
    Bool(bool),
    Num(f64),
    Str(String),
    List(Vec<GExpr>),
    /// `root.seg.seg`; `root` may be `affectedDevice.<key>`.
    Attr { root: String, segs: Vec<String> },
    Not(Box<GExpr>),
    Neg(Box<GExpr>),
    Bin(GOp, Box<GExpr>, Box<GExpr>),
    Call(String, Vec<GExpr>),
}

impl GExpr {
    pub fn depth(&self) -> usize {
        match self {
            GExpr::List(items) | GExpr::Call(_, items) => 1 + items.iter().map(GExpr::depth).max().unwrap_or(0),
            GExpr::Not(e) | GExpr::Neg(e) => 1 + e.depth(),
            GExpr::Bin(_, l, r) => 1 + l.depth().max(r.depth()),
            _ => 1,
        }
    }

    /// Fully parenthesized source text.
    pub fn render(&self) -> String {
        match self {
            GExpr::Null => "None".into(),
            GExpr::Bool(true) => "True".into(),
            GExpr::Bool(false) => "False".into(),
            GExpr::Num(n) => format!("{n}"),
            GExpr::Str(s) => {
                let mut out = String::from("'");
                for c in s.chars() {
                    match c {
                        '\'' => out.push_str("\\'"),
                        '\\' => out.push_str("\\\\"),
                        '\n' => out.push_str("\\n"),
                        c => out.push(c),
                    }
                }
                out.push('\'');
                out
            }
            GExpr::List(items) => format!("[{}]", items.iter().map(GExpr::render).collect::<Vec<_>>().join(", ")),
            GExpr::Attr { root, segs } => {
                let mut out = root.clone();
                for s in segs {
                    out.push('.');
                    out.push_str(s);
                }
                out
            }
            GExpr::Not(e) => format!("(not {})", e.render()),
            GExpr::Neg(e) => format!("(-{})", e.render()),
            GExpr::Bin(op, l, r) => format!("({} {} {})", l.render(), op.symbol(), r.render()),
            GExpr::Call(name, args) => {
                format!("{name}({})", args.iter().map(GExpr::render).collect::<Vec<_>>().join(", "))
            }
        }
    }
}

/// Reference value. Sets are kept canonical: scalars only, sorted bool < number < string, no duplicates.
#[derive(Debug, Clone)]
pub enum RVal {
    Nil,
    B(bool),
    N(f64),
    S(String),
    Set(Vec<RVal>),
    L(Vec<RVal>),
}

impl RVal {
    fn rank(&self) -> u8 {
        match self {
            RVal::Nil => 0,
            RVal::B(_) => 1,
            RVal::N(_) => 2,
            RVal::S(_) => 3,
            RVal::Set(_) => 4,
            RVal::L(_) => 5,
        }
    }

    pub fn truthy(&self) -> bool {
        match self {
            RVal::Nil => false,
            RVal::B(b) => *b,
            RVal::N(n) => *n != 0.0,
            RVal::S(s) => !s.is_empty(),
            RVal::Set(v) | RVal::L(v) => !v.is_empty(),
        }
    }

    fn is_scalar(&self) -> bool {
        matches!(self, RVal::B(_) | RVal::N(_) | RVal::S(_))
    }

    /// Builds a canonical set from scalars.
    pub fn set(items: Vec<RVal>) -> RVal {
        let mut items = items;
        items.sort_by(scalar_order);
        items.dedup_by(|a, b| scalar_order(a, b) == Ordering::Equal);
        RVal::Set(items)
    }

    pub fn same(&self, other: &RVal) -> bool {
        match (self, other) {
            (RVal::Nil, RVal::Nil) => true,
            (RVal::B(a), RVal::B(b)) => a == b,
            (RVal::N(a), RVal::N(b)) => a == b,
            (RVal::S(a), RVal::S(b)) => a == b,
            (RVal::Set(a), RVal::Set(b)) | (RVal::L(a), RVal::L(b)) => {
                a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.same(y))
            }
            _ => false,
        }
    }
}

fn scalar_order(a: &RVal, b: &RVal) -> Ordering {
    match (a, b) {
        (RVal::B(x), RVal::B(y)) => x.cmp(y),
        (RVal::N(x), RVal::N(y)) => x.partial_cmp(y).unwrap_or(Ordering::Equal),
        (RVal::S(x), RVal::S(y)) => x.cmp(y),
        _ => a.rank().cmp(&b.rank()),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RErr {
    TypeMismatch,
    UnknownAttribute,
    UnboundRoot,
    UnknownFunction,
    Arity,
    DivisionByZero,
    InvalidArgument,
}

pub type Record = BTreeMap<String, RVal>;

#[derive(Debug, Clone)]
pub enum RBinding {
    One(Record),
    Many(Vec<Record>),
}

#[derive(Debug, Clone, Default)]
pub struct REnv {
    pub roots: BTreeMap<String, RBinding>,
    /// Value `now()` returns.
    pub now: f64,
}

pub fn reference_eval(e: &GExpr, env: &REnv) -> Result<RVal, RErr> {
    use RErr::*;
    match e {
        GExpr::Null => Ok(RVal::Nil),
        GExpr::Bool(b) => Ok(RVal::B(*b)),
        GExpr::Num(n) => Ok(RVal::N(*n)),
        GExpr::Str(s) => Ok(RVal::S(s.clone())),
        GExpr::List(items) => {
            let mut out = Vec::new();
            for i in items {
                out.push(reference_eval(i, env)?);
            }
            Ok(RVal::L(out))
        }
        GExpr::Attr { root, segs } => {
            let binding = env.roots.get(root).ok_or(UnboundRoot)?;
            match segs.len() {
                0 => return Err(TypeMismatch),
                1 => {}
                _ => return Err(UnknownAttribute),
            }
            let field = &segs[0];
            match binding {
                RBinding::One(rec) => rec.get(field).cloned().ok_or(UnknownAttribute),
                RBinding::Many(recs) => {
                    let mut out = Vec::new();
                    for r in recs {
                        out.push(r.get(field).cloned().ok_or(UnknownAttribute)?);
                    }
                    Ok(RVal::L(out))
                }
            }
        }
        GExpr::Not(x) => Ok(RVal::B(!reference_eval(x, env)?.truthy())),
        GExpr::Neg(x) => match reference_eval(x, env)? {
            RVal::N(n) => Ok(RVal::N(-n)),
            _ => Err(TypeMismatch),
        },
        GExpr::Bin(GOp::And, l, r) => {
            if !reference_eval(l, env)?.truthy() {
                return Ok(RVal::B(false));
            }
            Ok(RVal::B(reference_eval(r, env)?.truthy()))
        }
        GExpr::Bin(GOp::Or, l, r) => {
            if reference_eval(l, env)?.truthy() {
                return Ok(RVal::B(true));
            }
            Ok(RVal::B(reference_eval(r, env)?.truthy()))
        }
        GExpr::Bin(op, l, r) => {
            let a = reference_eval(l, env)?;
            let b = reference_eval(r, env)?;
            binary(*op, a, b)
        }
        GExpr::Call(name, args) => {
            let arity = match name.as_str() {
                "now" => 0,
                "contains" => 2,
                "set" | "len" | "sum" | "count" | "min" | "max" => 1,
                _ => return Err(UnknownFunction),
            };
            let mut vals = Vec::new();
            for a in args {
                vals.push(reference_eval(a, env)?);
            }
            if vals.len() != arity {
                return Err(Arity);
            }
            call(name, vals, env)
        }
    }
}

fn binary(op: GOp, a: RVal, b: RVal) -> Result<RVal, RErr> {
    use RErr::*;
    match op {
        GOp::Eq | GOp::Ne => {
            let comparable = matches!(a, RVal::Nil) || matches!(b, RVal::Nil) || a.rank() == b.rank();
            if !comparable {
                return Err(TypeMismatch);
            }
            Ok(RVal::B(a.same(&b) == (op == GOp::Eq)))
        }
        GOp::Lt | GOp::Le | GOp::Gt | GOp::Ge => {
            let ord = match (&a, &b) {
                (RVal::N(x), RVal::N(y)) => x.partial_cmp(y),
                (RVal::S(x), RVal::S(y)) => Some(x.cmp(y)),
                (RVal::B(x), RVal::B(y)) => Some(x.cmp(y)),
                _ => return Err(TypeMismatch),
            };
            let Some(ord) = ord else { return Ok(RVal::B(false)) };
            Ok(RVal::B(match op {
                GOp::Lt => ord.is_lt(),
                GOp::Le => ord.is_le(),
                GOp::Gt => ord.is_gt(),
                _ => ord.is_ge(),
            }))
        }
        GOp::Inter | GOp::Union => {
            let (RVal::Set(x) | RVal::L(x)) = a else { return Err(TypeMismatch) };
            let (RVal::Set(y) | RVal::L(y)) = b else { return Err(TypeMismatch) };
            if !x.iter().chain(&y).all(RVal::is_scalar) {
                return Err(TypeMismatch);
            }
            let items = if op == GOp::Union {
                x.into_iter().chain(y).collect()
            } else {
                x.into_iter()
                    .filter(|i| y.iter().any(|j| scalar_order(i, j) == Ordering::Equal && i.rank() == j.rank()))
                    .collect()
            };
            Ok(RVal::set(items))
        }
        GOp::Add => match (a, b) {
            (RVal::N(x), RVal::N(y)) => Ok(RVal::N(x + y)),
            (RVal::S(x), RVal::S(y)) => Ok(RVal::S(x + &y)),
            _ => Err(TypeMismatch),
        },
        GOp::Sub | GOp::Mul | GOp::Div => {
            let (RVal::N(x), RVal::N(y)) = (a, b) else { return Err(TypeMismatch) };
            match op {
                GOp::Sub => Ok(RVal::N(x - y)),
                GOp::Mul => Ok(RVal::N(x * y)),
                _ if y == 0.0 => Err(DivisionByZero),
                _ => Ok(RVal::N(x / y)),
            }
        }
        GOp::And | GOp::Or => unreachable!(),
    }
}

fn members(v: RVal) -> Result<Vec<RVal>, RErr> {
    match v {
        RVal::Set(items) | RVal::L(items) => Ok(items),
        _ => Err(RErr::TypeMismatch),
    }
}

fn nums(v: RVal) -> Result<Vec<f64>, RErr> {
    members(v)?
        .into_iter()
        .map(|i| match i {
            RVal::N(n) => Ok(n),
            _ => Err(RErr::TypeMismatch),
        })
        .collect()
}

fn call(name: &str, mut args: Vec<RVal>, env: &REnv) -> Result<RVal, RErr> {
    use RErr::*;
    let first = if args.is_empty() { RVal::Nil } else { args.remove(0) };
    match name {
        "now" => Ok(RVal::N(env.now)),
        "set" => {
            let items = members(first)?;
            if !items.iter().all(RVal::is_scalar) {
                return Err(TypeMismatch);
            }
            Ok(RVal::set(items))
        }
        "len" => match first {
            RVal::S(s) => Ok(RVal::N(s.chars().count() as f64)),
            other => Ok(RVal::N(members(other)?.len() as f64)),
        },
        "sum" => {
            let mut total = 0.0;
            for n in nums(first)? {
                total += n;
            }
            Ok(RVal::N(total))
        }
        "count" => Ok(RVal::N(members(first)?.iter().filter(|v| v.truthy()).count() as f64)),
        "min" | "max" => {
            let ns = nums(first)?;
            let mut best: Option<f64> = None;
            for n in ns {
                best = Some(match best {
                    None => n,
                    Some(b) if name == "min" => {
                        if n < b {
                            n
                        } else {
                            b
                        }
                    }
                    Some(b) => {
                        if n > b {
                            n
                        } else {
                            b
                        }
                    }
                });
            }
            best.map(RVal::N).ok_or(InvalidArgument)
        }
        "contains" => {
            let item = args.remove(0);
            match first {
                RVal::S(hay) => match item {
                    RVal::S(needle) => Ok(RVal::B(hay.contains(&needle))),
                    _ => Err(TypeMismatch),
                },
                RVal::L(items) => Ok(RVal::B(items.iter().any(|i| i.same(&item)))),
                RVal::Set(items) => Ok(RVal::B(item.is_scalar() && items.iter().any(|i| i.same(&item)))),
                _ => Err(TypeMismatch),
            }
        }
        _ => Err(UnknownFunction),
    }
}
