//! Closed-form coefficient expressions over the coordinates `x1`, `x2`.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?
//! atom   := number | ident | ident '(' expr ')' | '(' expr ')'
//! ```
//!
//! Identifiers are `x1`, `x2` (`x` and `y` are accepted as aliases), the
//! constants `pi` and `e`, and the functions `sin`, `cos`, `exp`, `log`,
//! `sqrt`, `abs`.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("unexpected character {ch:?} at offset {pos} in {src:?}")]
    UnexpectedChar { src: String, pos: usize, ch: char },
    #[error("unexpected end of expression {0:?}")]
    UnexpectedEnd(String),
    #[error("unknown identifier {name:?} in {src:?}")]
    UnknownIdent { src: String, name: String },
    #[error("trailing input at offset {pos} in {src:?}")]
    Trailing { src: String, pos: usize },
    #[error("variable x{index} used in a {dim}-dimensional problem")]
    DimensionMismatch { index: usize, dim: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "sin" => Self::Sin,
            "cos" => Self::Cos,
            "exp" => Self::Exp,
            "log" | "ln" => Self::Log,
            "sqrt" => Self::Sqrt,
            "abs" => Self::Abs,
            _ => return None,
        })
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Self::Sin => v.sin(),
            Self::Cos => v.cos(),
            Self::Exp => v.exp(),
            Self::Log => v.ln(),
            Self::Sqrt => v.sqrt(),
            Self::Abs => v.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Call(Func, Box<Node>),
}

impl Node {
    fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Node::Const(c) => *c,
            Node::Var(i) => x.get(*i).copied().unwrap_or(f64::NAN),
            Node::Neg(a) => -a.eval(x),
            Node::Add(a, b) => a.eval(x) + b.eval(x),
            Node::Sub(a, b) => a.eval(x) - b.eval(x),
            Node::Mul(a, b) => a.eval(x) * b.eval(x),
            Node::Div(a, b) => a.eval(x) / b.eval(x),
            Node::Pow(a, b) => a.eval(x).powf(b.eval(x)),
            Node::Call(f, a) => f.apply(a.eval(x)),
        }
    }

    fn max_var(&self) -> Option<usize> {
        match self {
            Node::Const(_) => None,
            Node::Var(i) => Some(*i),
            Node::Neg(a) | Node::Call(_, a) => a.max_var(),
            Node::Add(a, b) | Node::Sub(a, b) | Node::Mul(a, b) | Node::Div(a, b) | Node::Pow(a, b) => a.max_var().max(b.max_var()),
        }
    }

    /// Constant folding; keeps evaluation cheap inside simulation loops.
    fn fold(self) -> Node {
        fn bin(a: Node, b: Node, f: fn(f64, f64) -> f64, mk: fn(Box<Node>, Box<Node>) -> Node) -> Node {
            let (a, b) = (a.fold(), b.fold());
            match (&a, &b) {
                (Node::Const(x), Node::Const(y)) => Node::Const(f(*x, *y)),
                _ => mk(Box::new(a), Box::new(b)),
            }
        }
        match self {
            Node::Neg(a) => match a.fold() {
                Node::Const(c) => Node::Const(-c),
                other => Node::Neg(Box::new(other)),
            },
            Node::Call(func, a) => match a.fold() {
                Node::Const(c) => Node::Const(func.apply(c)),
                other => Node::Call(func, Box::new(other)),
            },
            Node::Add(a, b) => bin(*a, *b, |x, y| x + y, Node::Add),
            Node::Sub(a, b) => bin(*a, *b, |x, y| x - y, Node::Sub),
            Node::Mul(a, b) => bin(*a, *b, |x, y| x * y, Node::Mul),
            Node::Div(a, b) => bin(*a, *b, |x, y| x / y, Node::Div),
            Node::Pow(a, b) => bin(*a, *b, f64::powf, Node::Pow),
            leaf => leaf,
        }
    }
}

/// A parsed coefficient expression. Keeps its source text for serialization.
#[derive(Clone)]
pub struct Expr {
    src: String,
    root: Node,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self, ExprError> {
        let mut p = Parser { src, bytes: src.as_bytes(), pos: 0 };
        let root = p.expr()?;
        p.skip_ws();
        if p.pos != p.bytes.len() {
            return Err(ExprError::Trailing { src: src.to_string(), pos: p.pos });
        }
        Ok(Self { src: src.trim().to_string(), root: root.fold() })
    }

    pub fn constant(c: f64) -> Self {
        Self { src: format_const(c), root: Node::Const(c) }
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.root.eval(x)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.root {
            Node::Const(c) => Some(c),
            _ => None,
        }
    }

    pub fn source(&self) -> &str {
        &self.src
    }

    /// Errors if the expression references a coordinate beyond `dim`.
    pub fn check_dim(&self, dim: usize) -> Result<(), ExprError> {
        match self.root.max_var() {
            Some(i) if i >= dim => Err(ExprError::DimensionMismatch { index: i + 1, dim }),
            _ => Ok(()),
        }
    }
}

fn format_const(c: f64) -> String {
    if c.fract() == 0.0 && c.abs() < 1e15 {
        format!("{c:.0}")
    } else {
        format!("{c:?}")
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.src)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.src)
    }
}

impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        self.root == other.root
    }
}

impl std::str::FromStr for Expr {
    type Err = ExprError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Expr::parse(s)
    }
}

impl Serialize for Expr {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.src)
    }
}

impl<'de> Deserialize<'de> for Expr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(c) => Ok(Expr::constant(c)),
            Raw::Text(s) => Expr::parse(&s).map_err(serde::de::Error::custom),
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn unexpected(&self) -> ExprError {
        match self.src[self.pos..].chars().next() {
            Some(ch) => ExprError::UnexpectedChar { src: self.src.to_string(), pos: self.pos, ch },
            None => ExprError::UnexpectedEnd(self.src.to_string()),
        }
    }

    fn expect(&mut self, b: u8) -> Result<(), ExprError> {
        if self.peek() == Some(b) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.unexpected())
        }
    }

    fn expr(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Node, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(b'/') => {
                    self.pos += 1;
                    lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(b'-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.unary()?)))
            }
            Some(b'+') => {
                self.pos += 1;
                self.unary()
            }
            _ => self.power(),
        }
    }

    fn power(&mut self) -> Result<Node, ExprError> {
        let base = self.atom()?;
        if self.peek() == Some(b'^') {
            self.pos += 1;
            // right associative: 2^3^2 = 2^(3^2)
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ExprError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() => self.ident(),
            _ => Err(self.unexpected()),
        }
    }

    fn number(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self.pos < self.bytes.len() && (self.bytes[self.pos].is_ascii_digit() || self.bytes[self.pos] == b'.') {
            self.pos += 1;
        }
        if self.pos < self.bytes.len() && matches!(self.bytes[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.bytes.len() && matches!(self.bytes[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        self.src[start..self.pos].parse::<f64>().map(Node::Const).map_err(|_| {
            self.pos = start;
            self.unexpected()
        })
    }

    fn ident(&mut self) -> Result<Node, ExprError> {
        let start = self.pos;
        while self.pos < self.bytes.len() && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_') {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        if let Some(func) = Func::from_name(name) {
            self.expect(b'(')?;
            let arg = self.expr()?;
            self.expect(b')')?;
            return Ok(Node::Call(func, Box::new(arg)));
        }
        match name {
            "x1" | "x" => Ok(Node::Var(0)),
            "x2" | "y" => Ok(Node::Var(1)),
            "pi" => Ok(Node::Const(std::f64::consts::PI)),
            "e" => Ok(Node::Const(std::f64::consts::E)),
            _ => Err(ExprError::UnknownIdent { src: self.src.to_string(), name: name.to_string() }),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(s: &str, x: &[f64]) -> f64 {
        Expr::parse(s).unwrap().eval(x)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", &[]), 7.0);
        assert_eq!(ev("(1 + 2) * 3", &[]), 9.0);
        assert_eq!(ev("2^3^2", &[]), 512.0);
        assert_eq!(ev("-2^2", &[]), -4.0);
        assert_eq!(ev("8 / 4 / 2", &[]), 1.0);
        assert_eq!(ev("1 - 2 - 3", &[]), -4.0);
    }

    #[test]
    fn variables_and_functions() {
        let x = [0.25, 2.0];
        assert!((ev("sin(pi * x1)", &x) - (std::f64::consts::PI * 0.25).sin()).abs() < 1e-15);
        assert_eq!(ev("1 + x2", &x), 3.0);
        assert_eq!(ev("x * y", &x), 0.5);
        assert!((ev("exp(log(3))", &x) - 3.0).abs() < 1e-14);
        assert_eq!(ev("1.5e2", &x), 150.0);
        assert!((ev("cos(0) + e", &x) - (1.0 + std::f64::consts::E)).abs() < 1e-15);
    }

    #[test]
    fn constant_folding() {
        assert_eq!(Expr::parse("2 * (3 + 1)").unwrap().as_const(), Some(8.0));
        assert_eq!(Expr::parse("x1 + 1").unwrap().as_const(), None);
    }

    #[test]
    fn errors() {
        assert!(matches!(Expr::parse("1 +"), Err(ExprError::UnexpectedEnd(_))));
        assert!(matches!(Expr::parse("foo(1)"), Err(ExprError::UnknownIdent { .. })));
        assert!(matches!(Expr::parse("1 2"), Err(ExprError::Trailing { .. })));
        assert!(matches!(Expr::parse("sin 1"), Err(ExprError::UnexpectedChar { .. })));
        let e = Expr::parse("x2").unwrap();
        assert!(e.check_dim(1).is_err());
        assert!(e.check_dim(2).is_ok());
    }

    #[test]
    fn serde_accepts_numbers_and_strings() {
        let e: Expr = serde_json::from_str("\"1 + x1\"").unwrap();
        assert_eq!(e.eval(&[2.0]), 3.0);
        let c: Expr = serde_json::from_str("0.5").unwrap();
        assert_eq!(c.as_const(), Some(0.5));
        assert_eq!(serde_json::to_string(&e).unwrap(), "\"1 + x1\"");
    }
}
