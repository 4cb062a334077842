//! Random expressions and attribute environments, plus the comparison of the main parser and
//! evaluator against the reference interpreter.

use std::collections::BTreeMap;
use std::sync::Arc;

use chrono::{DateTime, TimeZone, Utc};
use rand::seq::IndexedRandom;
use rand::Rng;

use iip_core::clock::FixedClock;
use iip_core::expr::{eval_expr, parse_expr, AttributeView, Binding, Bindings, EvalError, FunctionRegistry, Value};

use crate::oracle::{reference_eval, GExpr, GOp, RBinding, REnv, RErr, RVal, Record};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Ty {
    Bool,
    Num,
    Str,
    Coll,
    Any,
}

const STRINGS: &[&str] = &["", "a", "b", "ab", "zone1", "zone2", "it's", "back\\slash", "two\nlines", "héllo"];
const ZONES: &[&str] = &["zone1", "zone2", "zone3"];

/// Attribute names per root, with the type each holds.
fn schema(root: &str) -> &'static [(&'static str, Ty)] {
    match root {
        "subjectDevice" => &[("capacity", Ty::Num), ("zone", Ty::Str), ("on", Ty::Bool)],
        "objectDevice" => &[
            ("power", Ty::Num),
            ("zone", Ty::Str),
            ("feeds", Ty::Coll),
            ("on", Ty::Bool),
            ("label", Ty::Str),
        ],
        "affectedDevice.ac" => &[("on", Ty::Bool), ("feeds", Ty::Coll), ("temp", Ty::Num)],
        "affectedDevice.loads" => &[("power", Ty::Num), ("on", Ty::Bool)],
        _ => &[],
    }
}

const ROOTS: &[&str] = &["subjectDevice", "objectDevice", "affectedDevice.ac", "affectedDevice.loads"];

pub struct ExprGen<'a, R: Rng> {
    rng: &'a mut R,
    /// Probability of deliberately drawing an ill-typed or ill-formed node.
    pub chaos: f64,
}

impl<'a, R: Rng> ExprGen<'a, R> {
    pub fn new(rng: &'a mut R) -> Self {
        Self { rng, chaos: 0.08 }
    }

    fn chance(&mut self, p: f64) -> bool {
        self.rng.random_bool(p)
    }

    fn num_literal(&mut self) -> f64 {
        match self.rng.random_range(0..4) {
            0 => 0.0,
            1 => self.rng.random_range(1..10) as f64,
            2 => self.rng.random_range(0..200) as f64 / 2.0,
            _ => self.rng.random_range(0..1000) as f64,
        }
    }

    fn str_literal(&mut self) -> String {
        STRINGS.choose(self.rng).unwrap().to_string()
    }

    fn attr_of(&mut self, ty: Ty) -> Option<GExpr> {
        let options: Vec<(&str, &str)> = ROOTS
            .iter()
            .flat_map(|r| schema(r).iter().map(move |(a, t)| (*r, *a, *t)))
            .filter(|(r, _, t)| {
                // A SET-bound root yields a list of its attribute.
                if *r == "affectedDevice.loads" {
                    ty == Ty::Coll || ty == Ty::Any
                } else {
                    *t == ty || ty == Ty::Any
                }
            })
            .map(|(r, a, _)| (r, a))
            .collect();
        let (root, attr) = *options.choose(self.rng)?;
        Some(GExpr::Attr {
            root: root.to_string(),
            segs: vec![attr.to_string()],
        })
    }

    fn broken_path(&mut self) -> GExpr {
        let (root, segs): (&str, Vec<&str>) = match self.rng.random_range(0..4) {
            0 => ("objectDevice", vec!["missing"]),
            1 => ("zoneDevice", vec!["temp"]),
            2 => ("objectDevice", vec!["power", "extra"]),
            _ => ("subjectDevice", vec![]),
        };
        GExpr::Attr {
            root: root.into(),
            segs: segs.into_iter().map(String::from).collect(),
        }
    }

    fn leaf(&mut self, ty: Ty, depth: usize) -> GExpr {
        let ty = if ty == Ty::Any {
            *[Ty::Bool, Ty::Num, Ty::Str, Ty::Coll].choose(self.rng).unwrap()
        } else {
            ty
        };
        if self.chance(self.chaos / 2.0) {
            return if self.chance(0.5) { GExpr::Null } else { self.broken_path() };
        }
        if self.chance(0.4) {
            if let Some(a) = self.attr_of(ty) {
                return a;
            }
        }
        match ty {
            Ty::Bool => GExpr::Bool(self.chance(0.5)),
            Ty::Num => GExpr::Num(self.num_literal()),
            Ty::Str => GExpr::Str(self.str_literal()),
            _ => {
                let n = if depth > 1 { self.rng.random_range(0..4) } else { 0 };
                let items = (0..n)
                    .map(|_| {
                        if self.chance(0.6) {
                            GExpr::Str(ZONES.choose(self.rng).unwrap().to_string())
                        } else {
                            GExpr::Num(self.rng.random_range(0..5) as f64)
                        }
                    })
                    .collect();
                GExpr::List(items)
            }
        }
    }

    /// An expression no deeper than `depth`.
    pub fn expr(&mut self, depth: usize) -> GExpr {
        self.gen(Ty::Any, depth)
    }

    fn gen(&mut self, ty: Ty, depth: usize) -> GExpr {
        let ty = if self.chance(self.chaos) { Ty::Any } else { ty };
        if depth <= 1 || self.chance(0.2) {
            return self.leaf(ty, depth);
        }
        let d = depth - 1;
        let ty = if ty == Ty::Any {
            *[Ty::Bool, Ty::Bool, Ty::Num, Ty::Str, Ty::Coll].choose(self.rng).unwrap()
        } else {
            ty
        };
        let bin = |op, l, r| GExpr::Bin(op, Box::new(l), Box::new(r));
        if self.chance(self.chaos / 2.0) {
            // Unknown function or wrong arity.
            let name = if self.chance(0.5) { "weather" } else { "sum" };
            let args = (0..self.rng.random_range(0..3)).map(|_| self.gen(Ty::Any, d)).collect();
            return GExpr::Call(name.into(), args);
        }
        match ty {
            Ty::Bool => match self.rng.random_range(0..7) {
                0 => GExpr::Not(Box::new(self.gen(Ty::Any, d))),
                1 => {
                    let op = if self.chance(0.5) { GOp::And } else { GOp::Or };
                    bin(op, self.gen(Ty::Any, d), self.gen(Ty::Any, d))
                }
                2 | 3 => {
                    let op = *[GOp::Lt, GOp::Le, GOp::Gt, GOp::Ge].choose(self.rng).unwrap();
                    let t = *[Ty::Num, Ty::Num, Ty::Str, Ty::Bool].choose(self.rng).unwrap();
                    bin(op, self.gen(t, d), self.gen(t, d))
                }
                4 | 5 => {
                    let op = if self.chance(0.5) { GOp::Eq } else { GOp::Ne };
                    let t = *[Ty::Num, Ty::Str, Ty::Bool, Ty::Coll].choose(self.rng).unwrap();
                    bin(op, self.gen(t, d), self.gen(t, d))
                }
                _ => {
                    let (c, i) = if self.chance(0.3) { (Ty::Str, Ty::Str) } else { (Ty::Coll, Ty::Any) };
                    GExpr::Call("contains".into(), vec![self.gen(c, d), self.gen(i, d)])
                }
            },
            Ty::Num => match self.rng.random_range(0..6) {
                0 => GExpr::Neg(Box::new(self.gen(Ty::Num, d))),
                1 | 2 => {
                    let op = *[GOp::Add, GOp::Sub, GOp::Mul, GOp::Div].choose(self.rng).unwrap();
                    bin(op, self.gen(Ty::Num, d), self.gen(Ty::Num, d))
                }
                3 => GExpr::Call("now".into(), vec![]),
                _ => {
                    let f = *["sum", "len", "count", "min", "max"].choose(self.rng).unwrap();
                    let arg = if f == "len" && self.chance(0.3) {
                        self.gen(Ty::Str, d)
                    } else if f == "sum" || f == "min" || f == "max" {
                        GExpr::Attr {
                            root: "affectedDevice.loads".into(),
                            segs: vec!["power".into()],
                        }
                    } else {
                        self.gen(Ty::Coll, d)
                    };
                    GExpr::Call(f.into(), vec![arg])
                }
            },
            Ty::Str => bin(GOp::Add, self.gen(Ty::Str, d), self.gen(Ty::Str, d)),
            _ => match self.rng.random_range(0..4) {
                0 => GExpr::Call("set".into(), vec![self.gen(Ty::Coll, d)]),
                1 | 2 => {
                    let op = if self.chance(0.5) { GOp::Inter } else { GOp::Union };
                    bin(op, self.gen(Ty::Coll, d), self.gen(Ty::Coll, d))
                }
                _ => {
                    let n = self.rng.random_range(0..3);
                    GExpr::List((0..n).map(|_| self.gen(Ty::Any, d)).collect())
                }
            },
        }
    }

    fn value(&mut self, ty: Ty) -> RVal {
        match ty {
            Ty::Bool => RVal::B(self.chance(0.5)),
            Ty::Num => RVal::N(self.num_literal()),
            Ty::Str => RVal::S(ZONES.choose(self.rng).unwrap().to_string()),
            _ => {
                let n = self.rng.random_range(0..3);
                RVal::L((0..n).map(|_| RVal::S(ZONES.choose(self.rng).unwrap().to_string())).collect())
            }
        }
    }

    fn record(&mut self, root: &str) -> Record {
        schema(root).iter().map(|(a, t)| (a.to_string(), self.value(*t))).collect()
    }

    /// A random environment binding every root the generator refers to.
    pub fn env(&mut self, now: f64) -> REnv {
        let mut roots = BTreeMap::new();
        for root in ["subjectDevice", "objectDevice", "affectedDevice.ac"] {
            roots.insert(root.to_string(), RBinding::One(self.record(root)));
        }
        let n = self.rng.random_range(0..4);
        let mut loads: Vec<Record> = (0..n).map(|_| self.record("affectedDevice.loads")).collect();
        if !loads.is_empty() && self.chance(0.05) {
            loads[0].remove("power");
        }
        roots.insert("affectedDevice.loads".into(), RBinding::Many(loads));
        REnv { roots, now }
    }
}

pub fn to_value(v: &RVal) -> Value {
    match v {
        RVal::Nil => Value::Null,
        RVal::B(b) => Value::Bool(*b),
        RVal::N(n) => Value::Number(*n),
        RVal::S(s) => Value::Str(s.clone()),
        RVal::L(items) => Value::List(items.iter().map(to_value).collect()),
        RVal::Set(items) => Value::Set(items.iter().filter_map(|i| to_value(i).as_set_item()).collect()),
    }
}

pub fn from_value(v: &Value) -> RVal {
    match v {
        Value::Null => RVal::Nil,
        Value::Bool(b) => RVal::B(*b),
        Value::Number(n) => RVal::N(*n),
        Value::Str(s) => RVal::S(s.clone()),
        Value::List(items) => RVal::L(items.iter().map(from_value).collect()),
        Value::Set(items) => RVal::set(items.iter().cloned().map(|i| from_value(&Value::from(i))).collect()),
    }
}

fn view(rec: &Record) -> AttributeView {
    rec.iter().map(|(k, v)| (k.clone(), to_value(v))).collect()
}

pub fn to_bindings(env: &REnv) -> Bindings {
    let mut b = Bindings::new();
    for (root, binding) in &env.roots {
        b.bind(
            root.clone(),
            match binding {
                RBinding::One(r) => Binding::One(view(r)),
                RBinding::Many(rs) => Binding::Many(rs.iter().map(view).collect()),
            },
        );
    }
    b
}

pub fn error_kind(e: &EvalError) -> RErr {
    match e {
        EvalError::TypeMismatch { .. } => RErr::TypeMismatch,
        EvalError::UnknownAttribute { .. } => RErr::UnknownAttribute,
        EvalError::UnboundRoot(_) => RErr::UnboundRoot,
        EvalError::UnknownFunction(_) => RErr::UnknownFunction,
        EvalError::Arity { .. } => RErr::Arity,
        EvalError::DivisionByZero => RErr::DivisionByZero,
        EvalError::InvalidArgument { .. } => RErr::InvalidArgument,
    }
}

/// Fixed instant `now()` reports in expression checks.
pub fn check_instant() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2025, 3, 1, 8, 30, 0).unwrap()
}

pub fn check_registry() -> FunctionRegistry {
    FunctionRegistry::with_builtins(Arc::new(FixedClock::new(check_instant())))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CheckStats {
    pub values: usize,
    pub errors: usize,
}

/// Parses `g`'s rendering, checks the printer round-trip, and compares the main evaluator with
/// the reference interpreter. Returns a description of the first disagreement.
pub fn check_one(g: &GExpr, env: &REnv, functions: &FunctionRegistry, stats: &mut CheckStats) -> Result<(), String> {
    let src = g.render();
    let parsed = parse_expr(&src).map_err(|e| format!("`{src}` failed to parse: {e}"))?;
    let printed = parsed.to_string();
    let reparsed = parse_expr(&printed).map_err(|e| format!("printed form `{printed}` of `{src}` failed to parse: {e}"))?;
    if reparsed != parsed {
        return Err(format!("round-trip changed `{src}` into `{printed}`"));
    }
    let main = eval_expr(&parsed, &to_bindings(env), functions);
    let reference = reference_eval(g, env);
    match (&main, &reference) {
        (Ok(a), Ok(b)) if from_value(a).same(b) => {
            stats.values += 1;
            Ok(())
        }
        (Err(a), Err(b)) if error_kind(a) == *b => {
            stats.errors += 1;
            Ok(())
        }
        _ => Err(format!("`{src}`: main {main:?}, reference {reference:?}")),
    }
}

/// Checks `count` generated expressions of depth at most `max_depth`.
pub fn check_many<R: Rng>(rng: &mut R, count: usize, max_depth: usize) -> Result<CheckStats, String> {
    let functions = check_registry();
    let now = check_instant().timestamp_millis() as f64 / 1000.0;
    let mut stats = CheckStats::default();
    for _ in 0..count {
        let mut gen = ExprGen::new(rng);
        let env = gen.env(now);
        let depth = gen.rng.random_range(1..=max_depth);
        let g = gen.expr(depth);
        assert!(g.depth() <= max_depth);
        check_one(&g, &env, &functions, &mut stats)?;
    }
    Ok(stats)
}
