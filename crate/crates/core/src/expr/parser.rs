use std::fmt;

use thiserror::Error;

use super::ast::{BinaryOp, Expr, UnaryOp};
use super::value::Value;

/// Root identifier that takes one extra segment naming the affected-device key.
pub const AFFECTED_ROOT: &str = "affectedDevice";

const MAX_NESTING: usize = 64;
const MAX_DEPTH: usize = 256;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("syntax error at byte {offset}: expected {}, found {found}", expected.join(" | "))]
pub struct SyntaxError {
    pub offset: usize,
    pub expected: Vec<String>,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Str(String),
    True,
    False,
    Null,
    And,
    Or,
    Not,
    Op(&'static str),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
    Dot,
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "identifier `{s}`"),
            Tok::Number(n) => write!(f, "number `{n}`"),
            Tok::Str(_) => f.write_str("string"),
            Tok::True => f.write_str("`True`"),
            Tok::False => f.write_str("`False`"),
            Tok::Null => f.write_str("`None`"),
            Tok::And => f.write_str("`and`"),
            Tok::Or => f.write_str("`or`"),
            Tok::Not => f.write_str("`not`"),
            Tok::Op(op) => write!(f, "`{op}`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::LBracket => f.write_str("`[`"),
            Tok::RBracket => f.write_str("`]`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Dot => f.write_str("`.`"),
            Tok::Eof => f.write_str("end of input"),
        }
    }
}

fn lex(src: &str) -> Result<Vec<(usize, Tok)>, SyntaxError> {
    let bytes = src.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    let err = |offset: usize, expected: &str, found: String| SyntaxError {
        offset,
        expected: vec![expected.to_string()],
        found,
    };
    while i < bytes.len() {
        let c = bytes[i];
        let start = i;
        match c {
            b' ' | b'\t' | b'\n' | b'\r' => {
                i += 1;
                continue;
            }
            b'(' => toks.push((start, Tok::LParen)),
            b')' => toks.push((start, Tok::RParen)),
            b'[' => toks.push((start, Tok::LBracket)),
            b']' => toks.push((start, Tok::RBracket)),
            b',' => toks.push((start, Tok::Comma)),
            b'.' if !bytes.get(i + 1).is_some_and(u8::is_ascii_digit) => toks.push((start, Tok::Dot)),
            b'&' => toks.push((start, Tok::Op("&"))),
            b'|' => toks.push((start, Tok::Op("|"))),
            b'+' => toks.push((start, Tok::Op("+"))),
            b'-' => toks.push((start, Tok::Op("-"))),
            b'*' => toks.push((start, Tok::Op("*"))),
            b'/' => toks.push((start, Tok::Op("/"))),
            b'=' | b'!' | b'<' | b'>' => {
                let two = bytes.get(i + 1) == Some(&b'=');
                let op = match (c, two) {
                    (b'=', true) => "==",
                    (b'!', true) => "!=",
                    (b'<', true) => "<=",
                    (b'>', true) => ">=",
                    (b'<', false) => "<",
                    (b'>', false) => ">",
                    _ => return Err(err(start, "`==` or `!=`", format!("`{}`", c as char))),
                };
                toks.push((start, Tok::Op(op)));
                i += op.len();
                continue;
            }
            b'"' | b'\'' => {
                let quote = c;
                let mut out = String::new();
                let mut chars = src[i + 1..].char_indices();
                let mut closed = None;
                while let Some((off, ch)) = chars.next() {
                    match ch {
                        '\\' => {
                            let (_, esc) = chars
                                .next()
                                .ok_or_else(|| err(src.len(), "escape character", "end of input".into()))?;
                            out.push(match esc {
                                'n' => '\n',
                                't' => '\t',
                                'r' => '\r',
                                '\\' => '\\',
                                '"' => '"',
                                '\'' => '\'',
                                other => {
                                    return Err(err(i + 1 + off, "valid escape", format!("`\\{other}`")))
                                }
                            });
                        }
                        ch if ch as u32 == quote as u32 => {
                            closed = Some(i + 1 + off + 1);
                            break;
                        }
                        ch => out.push(ch),
                    }
                }
                i = closed.ok_or_else(|| err(src.len(), "closing quote", "end of input".into()))?;
                toks.push((start, Tok::Str(out)));
                continue;
            }
            b'0'..=b'9' | b'.' => {
                while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                    i += 1;
                }
                if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                    let mut j = i + 1;
                    if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                        j += 1;
                    }
                    if j < bytes.len() && bytes[j].is_ascii_digit() {
                        while j < bytes.len() && bytes[j].is_ascii_digit() {
                            j += 1;
                        }
                        i = j;
                    }
                }
                let text = &src[start..i];
                let n: f64 = text
                    .parse()
                    .map_err(|_| err(start, "number", format!("`{text}`")))?;
                toks.push((start, Tok::Number(n)));
                continue;
            }
            c if c.is_ascii_alphabetic() || c == b'_' => {
                while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                    i += 1;
                }
                let word = &src[start..i];
                toks.push((
                    start,
                    match word {
                        "True" | "true" => Tok::True,
                        "False" | "false" => Tok::False,
                        "None" | "null" => Tok::Null,
                        "and" => Tok::And,
                        "or" => Tok::Or,
                        "not" => Tok::Not,
                        _ => Tok::Ident(word.to_string()),
                    },
                ));
                continue;
            }
            _ => {
                let ch = src[i..].chars().next().unwrap_or('?');
                return Err(err(start, "token", format!("`{ch}`")));
            }
        }
        i += 1;
    }
    toks.push((src.len(), Tok::Eof));
    Ok(toks)
}

struct Parser {
    toks: Vec<(usize, Tok)>,
    pos: usize,
    nesting: usize,
    chain: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].1
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].0
    }

    fn bump(&mut self) -> Tok {
        let tok = self.toks[self.pos].1.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        tok
    }

    fn error(&self, expected: &[&str]) -> SyntaxError {
        SyntaxError {
            offset: self.offset(),
            expected: expected.iter().map(|s| s.to_string()).collect(),
            found: self.peek().to_string(),
        }
    }

    fn expect(&mut self, tok: Tok, name: &str) -> Result<(), SyntaxError> {
        if *self.peek() == tok {
            self.bump();
            Ok(())
        } else {
            Err(self.error(&[name]))
        }
    }

    fn too_deep(&self) -> SyntaxError {
        SyntaxError {
            offset: self.offset(),
            expected: vec![format!("nesting depth <= {MAX_NESTING} and expression depth <= {MAX_DEPTH}")],
            found: "deeper expression".into(),
        }
    }

    /// Recursive descent into a parenthesized or prefixed sub-expression.
    fn enter(&mut self) -> Result<(), SyntaxError> {
        self.nesting += 1;
        if self.nesting > MAX_NESTING || self.nesting + self.chain > MAX_DEPTH {
            return Err(self.too_deep());
        }
        Ok(())
    }

    /// One more link in a left-associative operator chain.
    fn extend(&mut self) -> Result<(), SyntaxError> {
        self.chain += 1;
        if self.nesting + self.chain > MAX_DEPTH {
            return Err(self.too_deep());
        }
        Ok(())
    }

    fn or_expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.and_expr()?;
        let depth = self.chain;
        while *self.peek() == Tok::Or {
            self.bump();
            self.extend()?;
            let rhs = self.and_expr()?;
            lhs = Expr::binary(BinaryOp::Or, lhs, rhs);
        }
        self.chain = depth;
        Ok(lhs)
    }

    fn and_expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.not_expr()?;
        let depth = self.chain;
        while *self.peek() == Tok::And {
            self.bump();
            self.extend()?;
            let rhs = self.not_expr()?;
            lhs = Expr::binary(BinaryOp::And, lhs, rhs);
        }
        self.chain = depth;
        Ok(lhs)
    }

    fn not_expr(&mut self) -> Result<Expr, SyntaxError> {
        if *self.peek() == Tok::Not {
            self.bump();
            self.enter()?;
            let operand = self.not_expr()?;
            self.nesting -= 1;
            return Ok(Expr::unary(UnaryOp::Not, operand));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, SyntaxError> {
        let lhs = self.set_expr()?;
        let op = match self.peek() {
            Tok::Op("==") => BinaryOp::Eq,
            Tok::Op("!=") => BinaryOp::Ne,
            Tok::Op("<") => BinaryOp::Lt,
            Tok::Op("<=") => BinaryOp::Le,
            Tok::Op(">") => BinaryOp::Gt,
            Tok::Op(">=") => BinaryOp::Ge,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.set_expr()?;
        if matches!(self.peek(), Tok::Op("==" | "!=" | "<" | "<=" | ">" | ">=")) {
            // Chained comparisons are ambiguous in this language; require parentheses.
            return Err(self.error(&["`and`", "`or`", "`)`", "end of input"]));
        }
        Ok(Expr::binary(op, lhs, rhs))
    }

    fn set_expr(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.additive()?;
        let depth = self.chain;
        loop {
            let op = match self.peek() {
                Tok::Op("&") => BinaryOp::Intersect,
                Tok::Op("|") => BinaryOp::Union,
                _ => {
                    self.chain = depth;
                    return Ok(lhs);
                }
            };
            self.bump();
            self.extend()?;
            let rhs = self.additive()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn additive(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.multiplicative()?;
        let depth = self.chain;
        loop {
            let op = match self.peek() {
                Tok::Op("+") => BinaryOp::Add,
                Tok::Op("-") => BinaryOp::Sub,
                _ => {
                    self.chain = depth;
                    return Ok(lhs);
                }
            };
            self.bump();
            self.extend()?;
            let rhs = self.multiplicative()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn multiplicative(&mut self) -> Result<Expr, SyntaxError> {
        let mut lhs = self.unary()?;
        let depth = self.chain;
        loop {
            let op = match self.peek() {
                Tok::Op("*") => BinaryOp::Mul,
                Tok::Op("/") => BinaryOp::Div,
                _ => {
                    self.chain = depth;
                    return Ok(lhs);
                }
            };
            self.bump();
            self.extend()?;
            let rhs = self.unary()?;
            lhs = Expr::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, SyntaxError> {
        if *self.peek() == Tok::Op("-") {
            self.bump();
            self.enter()?;
            let operand = self.unary()?;
            self.nesting -= 1;
            return Ok(Expr::unary(UnaryOp::Neg, operand));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, SyntaxError> {
        let start = self.pos;
        match self.bump() {
            Tok::True => Ok(Expr::Literal(Value::Bool(true))),
            Tok::False => Ok(Expr::Literal(Value::Bool(false))),
            Tok::Null => Ok(Expr::Literal(Value::Null)),
            Tok::Number(n) => Ok(Expr::Literal(Value::Number(n))),
            Tok::Str(s) => Ok(Expr::Literal(Value::Str(s))),
            Tok::LParen => {
                self.enter()?;
                let inner = self.or_expr()?;
                self.nesting -= 1;
                self.expect(Tok::RParen, "`)`")?;
                Ok(inner)
            }
            Tok::LBracket => {
                self.enter()?;
                let items = self.items(Tok::RBracket, "`]`")?;
                self.nesting -= 1;
                Ok(Expr::List(items))
            }
            Tok::Ident(name) => {
                if *self.peek() == Tok::LParen {
                    self.bump();
                    self.enter()?;
                    let args = self.items(Tok::RParen, "`)`")?;
                    self.nesting -= 1;
                    return Ok(Expr::Call(name, args));
                }
                let mut segments = Vec::new();
                while *self.peek() == Tok::Dot {
                    self.bump();
                    match self.peek().clone() {
                        Tok::Ident(seg) => {
                            self.bump();
                            segments.push(seg);
                        }
                        _ => return Err(self.error(&["identifier"])),
                    }
                }
                let root = if name == AFFECTED_ROOT {
                    if segments.is_empty() {
                        return Err(SyntaxError {
                            offset: self.offset(),
                            expected: vec!["`.` followed by an affected-device key".into()],
                            found: self.peek().to_string(),
                        });
                    }
                    format!("{AFFECTED_ROOT}.{}", segments.remove(0))
                } else {
                    name
                };
                Ok(Expr::Path { root, segments })
            }
            _ => {
                self.pos = start;
                Err(self.error(&["literal", "identifier", "`(`", "`[`", "`not`", "`-`"]))
            }
        }
    }

    fn items(&mut self, close: Tok, close_name: &str) -> Result<Vec<Expr>, SyntaxError> {
        let mut items = Vec::new();
        if *self.peek() == close {
            self.bump();
            return Ok(items);
        }
        loop {
            items.push(self.or_expr()?);
            match self.peek() {
                Tok::Comma => {
                    self.bump();
                }
                t if *t == close => {
                    self.bump();
                    return Ok(items);
                }
                _ => return Err(self.error(&["`,`", close_name])),
            }
        }
    }
}

/// Parses a `relationship` or `assertion` expression.
pub fn parse_expr(source: &str) -> Result<Expr, SyntaxError> {
    let toks = lex(source)?;
    let mut parser = Parser {
        toks,
        pos: 0,
        nesting: 0,
        chain: 0,
    };
    if *parser.peek() == Tok::Eof {
        return Err(parser.error(&["expression"]));
    }
    let expr = parser.or_expr()?;
    if *parser.peek() != Tok::Eof {
        return Err(parser.error(&["operator", "end of input"]));
    }
    Ok(expr)
}
