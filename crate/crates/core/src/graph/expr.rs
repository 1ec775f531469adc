//! Deterministic-node expressions: a small arithmetic language over parent
//! nodes with the link functions needed by the models (log, logit, their
//! inverses) and a box-indicator for interval constraints.
//!
//! The text form round-trips: `parse(e.to_string()) == e` for every canonical
//! expression, which the config format relies on.

use serde::{Deserialize, Serialize};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Const(f64),
    Node(String),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Log(Box<Expr>),
    Exp(Box<Expr>),
    Logit(Box<Expr>),
    InvLogit(Box<Expr>),
    /// 1.0 when lower <= value <= upper, else 0.0.
    Indicator {
        lower: Box<Expr>,
        value: Box<Expr>,
        upper: Box<Expr>,
    },
}

impl Expr {
    pub fn node(name: impl Into<String>) -> Expr {
        Expr::Node(name.into())
    }

    pub fn constant(v: f64) -> Expr {
        Expr::Const(v)
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        Expr::Add(Box::new(a), Box::new(b))
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        Expr::Sub(Box::new(a), Box::new(b))
    }

    pub fn mul(a: Expr, b: Expr) -> Expr {
        Expr::Mul(Box::new(a), Box::new(b))
    }

    pub fn div(a: Expr, b: Expr) -> Expr {
        Expr::Div(Box::new(a), Box::new(b))
    }

    pub fn inv_logit(a: Expr) -> Expr {
        Expr::InvLogit(Box::new(a))
    }

    pub fn indicator(lower: Expr, value: Expr, upper: Expr) -> Expr {
        Expr::Indicator {
            lower: Box::new(lower),
            value: Box::new(value),
            upper: Box::new(upper),
        }
    }

    /// Collect referenced node names (with repeats) into `out`.
    pub fn collect_refs<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Const(_) => {}
            Expr::Node(n) => out.push(n),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.collect_refs(out);
                b.collect_refs(out);
            }
            Expr::Log(a) | Expr::Exp(a) | Expr::Logit(a) | Expr::InvLogit(a) => {
                a.collect_refs(out)
            }
            Expr::Indicator { lower, value, upper } => {
                lower.collect_refs(out);
                value.collect_refs(out);
                upper.collect_refs(out);
            }
        }
    }

    pub fn refs(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.collect_refs(&mut out);
        out
    }

    /// Evaluate against a node-value lookup. Lookup failures are a programming
    /// error (validation catches unresolved references before evaluation).
    pub fn eval(&self, lookup: &dyn Fn(&str) -> f64) -> f64 {
        match self {
            Expr::Const(v) => *v,
            Expr::Node(n) => lookup(n),
            Expr::Add(a, b) => a.eval(lookup) + b.eval(lookup),
            Expr::Sub(a, b) => a.eval(lookup) - b.eval(lookup),
            Expr::Mul(a, b) => a.eval(lookup) * b.eval(lookup),
            Expr::Div(a, b) => a.eval(lookup) / b.eval(lookup),
            Expr::Log(a) => a.eval(lookup).ln(),
            Expr::Exp(a) => a.eval(lookup).exp(),
            Expr::Logit(a) => {
                let p = a.eval(lookup);
                (p / (1.0 - p)).ln()
            }
            Expr::InvLogit(a) => {
                let x = a.eval(lookup);
                1.0 / (1.0 + (-x).exp())
            }
            Expr::Indicator { lower, value, upper } => {
                let v = value.eval(lookup);
                if lower.eval(lookup) <= v && v <= upper.eval(lookup) {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// Rewrite node references through `map`.
    pub fn rename(&self, map: &dyn Fn(&str) -> String) -> Expr {
        match self {
            Expr::Const(v) => Expr::Const(*v),
            Expr::Node(n) => Expr::Node(map(n)),
            Expr::Add(a, b) => Expr::add(a.rename(map), b.rename(map)),
            Expr::Sub(a, b) => Expr::sub(a.rename(map), b.rename(map)),
            Expr::Mul(a, b) => Expr::mul(a.rename(map), b.rename(map)),
            Expr::Div(a, b) => Expr::div(a.rename(map), b.rename(map)),
            Expr::Log(a) => Expr::Log(Box::new(a.rename(map))),
            Expr::Exp(a) => Expr::Exp(Box::new(a.rename(map))),
            Expr::Logit(a) => Expr::Logit(Box::new(a.rename(map))),
            Expr::InvLogit(a) => Expr::InvLogit(Box::new(a.rename(map))),
            Expr::Indicator { lower, value, upper } => Expr::indicator(
                lower.rename(map),
                value.rename(map),
                upper.rename(map),
            ),
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            _ => 3,
        }
    }

    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        let prec = self.precedence();
        let parens = prec < min_prec;
        if parens {
            write!(f, "(")?;
        }
        match self {
            Expr::Const(v) => write!(f, "{}", v)?,
            Expr::Node(n) => write!(f, "{}", n)?,
            Expr::Add(a, b) => {
                a.fmt_prec(f, prec)?;
                write!(f, " + ")?;
                b.fmt_prec(f, prec + 1)?;
            }
            Expr::Sub(a, b) => {
                a.fmt_prec(f, prec)?;
                write!(f, " - ")?;
                b.fmt_prec(f, prec + 1)?;
            }
            Expr::Mul(a, b) => {
                a.fmt_prec(f, prec)?;
                write!(f, " * ")?;
                b.fmt_prec(f, prec + 1)?;
            }
            Expr::Div(a, b) => {
                a.fmt_prec(f, prec)?;
                write!(f, " / ")?;
                b.fmt_prec(f, prec + 1)?;
            }
            Expr::Log(a) => {
                write!(f, "log(")?;
                a.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
            Expr::Exp(a) => {
                write!(f, "exp(")?;
                a.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
            Expr::Logit(a) => {
                write!(f, "logit(")?;
                a.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
            Expr::InvLogit(a) => {
                write!(f, "invlogit(")?;
                a.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
            Expr::Indicator { lower, value, upper } => {
                write!(f, "indicator(")?;
                lower.fmt_prec(f, 0)?;
                write!(f, " <= ")?;
                value.fmt_prec(f, 0)?;
                write!(f, " <= ")?;
                upper.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
        }
        if parens {
            write!(f, ")")?;
        }
        Ok(())
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq, Eq)]
#[error("expression parse error at byte {at}: {message}")]
pub struct ExprParseError {
    pub at: usize,
    pub message: String,
}

/// Recursive-descent parser for the expression language.
///
/// Grammar: expr := term (('+'|'-') term)*; term := unary (('*'|'/') unary)*;
/// unary := '-' unary | atom; atom := number | name | fn '(' expr ')'
/// | 'indicator' '(' expr '<=' expr '<=' expr ')' | '(' expr ')'.
pub fn parse_expr(input: &str) -> Result<Expr, ExprParseError> {
    let mut p = Parser { input: input.as_bytes(), pos: 0 };
    p.skip_ws();
    let e = p.expr()?;
    p.skip_ws();
    if p.pos != p.input.len() {
        return Err(p.err("trailing input"));
    }
    Ok(e)
}

struct Parser<'a> {
    input: &'a [u8],
    pos: usize,
}

impl<'a> Parser<'a> {
    fn err(&self, message: &str) -> ExprParseError {
        ExprParseError { at: self.pos, message: message.to_string() }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.input.len() && self.input[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.input.get(self.pos).copied()
    }

    fn eat(&mut self, b: u8) -> bool {
        if self.peek() == Some(b) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, b: u8) -> Result<(), ExprParseError> {
        if self.eat(b) {
            Ok(())
        } else {
            Err(self.err(&format!("expected '{}'", b as char)))
        }
    }

    fn expr(&mut self) -> Result<Expr, ExprParseError> {
        let mut lhs = self.term()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::add(lhs, rhs);
                }
                Some(b'-') => {
                    self.pos += 1;
                    let rhs = self.term()?;
                    lhs = Expr::sub(lhs, rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprParseError> {
        let mut lhs = self.unary()?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = Expr::mul(lhs, rhs);
                }
                Some(b'/') => {
                    self.pos += 1;
                    let rhs = self.unary()?;
                    lhs = Expr::div(lhs, rhs);
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprParseError> {
        self.skip_ws();
        if self.eat(b'-') {
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Const(v) => Expr::Const(-v),
                other => Expr::sub(Expr::Const(0.0), other),
            });
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<Expr, ExprParseError> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.skip_ws();
                self.expect(b')')?;
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => {
                let name = self.ident();
                self.skip_ws();
                if self.peek() == Some(b'(') {
                    self.call(&name)
                } else {
                    Ok(Expr::Node(name))
                }
            }
            _ => Err(self.err("expected expression")),
        }
    }

    fn ident(&mut self) -> String {
        let start = self.pos;
        while self.pos < self.input.len() {
            let c = self.input[self.pos];
            if c.is_ascii_alphanumeric() || c == b'_' || c == b'.' || c == b'@' {
                self.pos += 1;
            } else {
                break;
            }
        }
        String::from_utf8_lossy(&self.input[start..self.pos]).into_owned()
    }

    fn number(&mut self) -> Result<Expr, ExprParseError> {
        let start = self.pos;
        while self.pos < self.input.len() {
            let c = self.input[self.pos];
            if c.is_ascii_digit() || c == b'.' || c == b'e' || c == b'E' {
                self.pos += 1;
            } else if (c == b'+' || c == b'-')
                && matches!(self.input[self.pos - 1], b'e' | b'E')
            {
                self.pos += 1;
            } else {
                break;
            }
        }
        let text = std::str::from_utf8(&self.input[start..self.pos]).unwrap();
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| self.err(&format!("invalid number '{text}'")))
    }

    fn call(&mut self, name: &str) -> Result<Expr, ExprParseError> {
        self.expect(b'(')?;
        if name == "indicator" {
            let lower = self.expr()?;
            self.skip_ws();
            self.cmp_le()?;
            let value = self.expr()?;
            self.skip_ws();
            self.cmp_le()?;
            let upper = self.expr()?;
            self.skip_ws();
            self.expect(b')')?;
            return Ok(Expr::indicator(lower, value, upper));
        }
        let inner = self.expr()?;
        self.skip_ws();
        self.expect(b')')?;
        match name {
            "log" => Ok(Expr::Log(Box::new(inner))),
            "exp" => Ok(Expr::Exp(Box::new(inner))),
            "logit" => Ok(Expr::Logit(Box::new(inner))),
            "invlogit" => Ok(Expr::InvLogit(Box::new(inner))),
            other => Err(self.err(&format!("unknown function '{other}'"))),
        }
    }

    fn cmp_le(&mut self) -> Result<(), ExprParseError> {
        self.expect(b'<')?;
        self.expect(b'=')
    }
}
