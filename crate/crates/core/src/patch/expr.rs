//! Expressions in one real variable `x`.
//!
//! Grammar: `+ - * /`, integer powers `^`, parentheses, unary minus,
//! numbers, `x`, and the functions `ln` (alias `log`), `exp`, `sin`, `cos`.

use std::fmt;

use serde::{Deserialize, Serialize};

use super::jet::Jet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var,
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, i32),
    Ln(Box<Node>),
    Exp(Box<Node>),
    Sin(Box<Node>),
    Cos(Box<Node>),
}

/// A parsed expression; keeps its source text for serialization.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Expr {
    source: String,
    root: Node,
}

impl Expr {
    pub fn parse(src: &str) -> Result<Self> {
        let tokens = lex(src)?;
        let mut p = Parser {
            tokens,
            pos: 0,
            src,
        };
        let root = p.expr()?;
        if p.pos < p.tokens.len() {
            return Err(p.error("unexpected trailing input"));
        }
        Ok(Expr {
            source: src.trim().to_string(),
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    /// Taylor coefficients `e^(k)(x)/k!`, `k = 0..=order`.
    pub fn jet(&self, x: f64, order: usize) -> Result<Jet> {
        eval_jet(&self.root, &Jet::variable(x, order)).map_err(|e| match e {
            Error::Domain(msg) => Error::Domain(format!("{} at x = {x}: {msg}", self.source)),
            other => other,
        })
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        Ok(self.jet(x, 0)?.value())
    }

    /// True when the expression is the literal constant zero.
    pub fn is_zero(&self) -> bool {
        matches!(self.root, Node::Const(c) if c == 0.0)
    }
}

impl fmt::Debug for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Expr({:?})", self.source)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.source)
    }
}

impl TryFrom<String> for Expr {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        Expr::parse(&s)
    }
}

impl From<Expr> for String {
    fn from(e: Expr) -> String {
        e.source
    }
}

impl std::str::FromStr for Expr {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Expr::parse(s)
    }
}

fn eval_jet(n: &Node, x: &Jet) -> Result<Jet> {
    let k = x.order();
    Ok(match n {
        Node::Const(c) => Jet::constant(*c, k),
        Node::Var => x.clone(),
        Node::Neg(a) => -&eval_jet(a, x)?,
        Node::Add(a, b) => &eval_jet(a, x)? + &eval_jet(b, x)?,
        Node::Sub(a, b) => &eval_jet(a, x)? - &eval_jet(b, x)?,
        Node::Mul(a, b) => &eval_jet(a, x)? * &eval_jet(b, x)?,
        Node::Div(a, b) => eval_jet(a, x)?.div(&eval_jet(b, x)?)?,
        Node::Pow(a, p) => eval_jet(a, x)?.powi(*p)?,
        Node::Ln(a) => eval_jet(a, x)?.ln()?,
        Node::Exp(a) => eval_jet(a, x)?.exp(),
        Node::Sin(a) => eval_jet(a, x)?.sin_cos().0,
        Node::Cos(a) => eval_jet(a, x)?.sin_cos().1,
    })
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn lex(src: &str) -> Result<Vec<(Tok, usize)>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                let mut j = i + 1;
                if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                    j += 1;
                }
                if j < chars.len() && chars[j].is_ascii_digit() {
                    i = j;
                    while i < chars.len() && chars[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text: String = chars[start..i].iter().collect();
            let v: f64 = text
                .parse()
                .map_err(|_| Error::Parse(format!("bad number '{text}' at column {}", start + 1)))?;
            out.push((Tok::Num(v), start));
        } else if c.is_ascii_alphabetic() {
            let start = i;
            while i < chars.len() && chars[i].is_ascii_alphanumeric() {
                i += 1;
            }
            out.push((Tok::Ident(chars[start..i].iter().collect()), start));
        } else if "+-*/^()".contains(c) {
            out.push((Tok::Op(c), i));
            i += 1;
        } else {
            return Err(Error::Parse(format!(
                "unexpected character '{c}' at column {} in '{src}'",
                i + 1
            )));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<(Tok, usize)>,
    pos: usize,
    src: &'a str,
}

impl Parser<'_> {
    fn error(&self, what: &str) -> Error {
        let col = self
            .tokens
            .get(self.pos)
            .map(|t| t.1 + 1)
            .unwrap_or(self.src.chars().count() + 1);
        Error::Parse(format!("{what} at column {col} in '{}'", self.src))
    }

    fn peek(&self) -> Option<&Tok> {
        self.tokens.get(self.pos).map(|t| &t.0)
    }

    fn eat(&mut self, op: char) -> bool {
        if self.peek() == Some(&Tok::Op(op)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        loop {
            if self.eat('+') {
                lhs = Node::Add(Box::new(lhs), Box::new(self.term()?));
            } else if self.eat('-') {
                lhs = Node::Sub(Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat('*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat('/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat('-') {
            return Ok(match self.unary()? {
                Node::Const(c) => Node::Const(-c),
                n => Node::Neg(Box::new(n)),
            });
        }
        if self.eat('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.primary()?;
        if !self.eat('^') {
            return Ok(base);
        }
        let neg = self.eat('-');
        let e = if self.eat('(') {
            let inner_neg = self.eat('-');
            let v = self.number()?;
            if !self.eat(')') {
                return Err(self.error("expected ')'"));
            }
            if inner_neg {
                -v
            } else {
                v
            }
        } else {
            self.number()?
        };
        let e = if neg { -e } else { e };
        if e.fract() != 0.0 || e.abs() > 64.0 {
            return Err(self.error(&format!("only small integer powers are supported, got {e}")));
        }
        Ok(Node::Pow(Box::new(base), e as i32))
    }

    fn number(&mut self) -> Result<f64> {
        match self.peek() {
            Some(Tok::Num(v)) => {
                let v = *v;
                self.pos += 1;
                Ok(v)
            }
            _ => Err(self.error("expected an integer exponent")),
        }
    }

    fn primary(&mut self) -> Result<Node> {
        match self.peek().cloned() {
            Some(Tok::Num(v)) => {
                self.pos += 1;
                Ok(Node::Const(v))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.expr()?;
                if !self.eat(')') {
                    return Err(self.error("expected ')'"));
                }
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if name == "x" {
                    return Ok(Node::Var);
                }
                let wrap: fn(Box<Node>) -> Node = match name.as_str() {
                    "ln" | "log" => Node::Ln,
                    "exp" => Node::Exp,
                    "sin" => Node::Sin,
                    "cos" => Node::Cos,
                    _ => {
                        self.pos -= 1;
                        return Err(self.error(&format!("unknown identifier '{name}'")));
                    }
                };
                if !self.eat('(') {
                    return Err(self.error(&format!("expected '(' after {name}")));
                }
                let arg = self.expr()?;
                if !self.eat(')') {
                    return Err(self.error("expected ')'"));
                }
                Ok(wrap(Box::new(arg)))
            }
            _ => Err(self.error("expected a number, x, a function or '('")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn jet(s: &str, x: f64, k: usize) -> Vec<f64> {
        Expr::parse(s).unwrap().jet(x, k).unwrap().0
    }

    #[test]
    fn mercator_and_shifted_log() {
        let j = jet("ln(1+x)", 0.0, 3);
        for (a, b) in j.iter().zip([0.0, 1.0, -0.5, 1.0 / 3.0]) {
            assert!((a - b).abs() < 1e-15);
        }
        let j = jet("ln(1+x)", 1.0, 2);
        for (a, b) in j.iter().zip([2f64.ln(), 0.5, -0.125]) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(jet("5", 3.7, 3), vec![5.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn precedence_and_powers() {
        let e = Expr::parse("-x^2 + 2*x - 3/4").unwrap();
        assert_eq!(e.eval(2.0).unwrap(), -4.0 + 4.0 - 0.75);
        assert_eq!(Expr::parse("x^(-2)").unwrap().eval(2.0).unwrap(), 0.25);
        assert_eq!(Expr::parse("(x+1)^-1").unwrap().eval(1.0).unwrap(), 0.5);
        assert_eq!(Expr::parse("log(1+x)^2").unwrap().eval(0.0).unwrap(), 0.0);
        assert_eq!(Expr::parse("1.5e2").unwrap().eval(0.0).unwrap(), 150.0);
        assert!(Expr::parse("0").unwrap().is_zero());
    }

    #[test]
    fn parse_errors() {
        for bad in ["", "x +", "sqrt(x)", "x^0.5", "(x", "2 $ x", "y"] {
            assert!(matches!(Expr::parse(bad), Err(Error::Parse(_))), "{bad}");
        }
    }

    #[test]
    fn domain_errors() {
        let e = Expr::parse("ln(1+x)").unwrap();
        assert!(matches!(e.eval(-1.0), Err(Error::Domain(_))));
        assert!(matches!(e.eval(-2.0), Err(Error::Domain(_))));
        assert!(matches!(Expr::parse("1/x").unwrap().eval(0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn serde_round_trip() {
        let e = Expr::parse("ln(1+x)^2").unwrap();
        let s = serde_json::to_string(&e).unwrap();
        assert_eq!(s, "\"ln(1+x)^2\"");
        let back: Expr = serde_json::from_str(&s).unwrap();
        assert_eq!(back, e);
    }

    fn central_difference(e: &Expr, x: f64, k: usize, h: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..=k {
            let c = crate::polyalg::binomial(k, i) as f64 * if i % 2 == 0 { 1.0 } else { -1.0 };
            acc += c * e.eval(x + (k as f64 / 2.0 - i as f64) * h).unwrap();
        }
        acc / h.powi(k as i32)
    }

    /// Richardson-extrapolated central difference.
    fn finite_derivative(e: &Expr, x: f64, k: usize) -> f64 {
        let h = [1e-3, 2e-3, 1e-2, 2e-2][k - 1];
        (4.0 * central_difference(e, x, k, h / 2.0) - central_difference(e, x, k, h)) / 3.0
    }

    proptest! {
        #[test]
        fn jets_match_finite_differences(x in -0.3f64..2.0, which in 0usize..5) {
            let srcs = ["ln(1+x)^2", "exp(x)*sin(x)", "cos(x)/(2+x)", "x^3 - 2*x + 1", "exp(-x^2)*ln(2+x)"];
            let e = Expr::parse(srcs[which]).unwrap();
            let j = e.jet(x, 4).unwrap();
            for k in 1..=4 {
                let d = j.derivative(k);
                let fd = finite_derivative(&e, x, k);
                prop_assert!((d - fd).abs() <= 1e-5 * (1.0 + d.abs()), "{} k={} {} {}", srcs[which], k, d, fd);
            }
        }
    }
}
