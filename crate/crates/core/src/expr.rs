//! Small expression language for model functions with exact symbolic derivatives.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Neg(Box<Expr>),
    Powi(Box<Expr>, i32),
    Sin(Box<Expr>),
    Cos(Box<Expr>),
    Exp(Box<Expr>),
    Log(Box<Expr>),
    Sqrt(Box<Expr>),
}

use Expr::*;

impl Expr {
    pub fn c(x: f64) -> Self {
        Const(x)
    }

    pub fn var(i: usize) -> Self {
        Var(i)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Const(c) => *c,
            Var(i) => x[*i],
            Add(a, b) => a.eval(x) + b.eval(x),
            Sub(a, b) => a.eval(x) - b.eval(x),
            Mul(a, b) => a.eval(x) * b.eval(x),
            Div(a, b) => a.eval(x) / b.eval(x),
            Neg(a) => -a.eval(x),
            Powi(a, k) => a.eval(x).powi(*k),
            Sin(a) => a.eval(x).sin(),
            Cos(a) => a.eval(x).cos(),
            Exp(a) => a.eval(x).exp(),
            Log(a) => a.eval(x).ln(),
            Sqrt(a) => a.eval(x).sqrt(),
        }
    }

    /// Evaluates a function of the single variable 0.
    pub fn at(&self, s: f64) -> f64 {
        self.eval(&[s])
    }

    fn is_const(&self, v: f64) -> bool {
        matches!(self, Const(c) if *c == v)
    }

    /// Exact partial derivative with respect to variable `i`.
    pub fn diff(&self, i: usize) -> Expr {
        let d = match self {
            Const(_) => Const(0.0),
            Var(j) => Const(if *j == i { 1.0 } else { 0.0 }),
            Add(a, b) => a.diff(i) + b.diff(i),
            Sub(a, b) => a.diff(i) - b.diff(i),
            Mul(a, b) => a.diff(i) * (**b).clone() + (**a).clone() * b.diff(i),
            Div(a, b) => {
                (a.diff(i) * (**b).clone() - (**a).clone() * b.diff(i)) / Powi(b.clone(), 2)
            }
            Neg(a) => -a.diff(i),
            Powi(a, k) => {
                if *k == 0 {
                    Const(0.0)
                } else {
                    Const(*k as f64) * Powi(a.clone(), k - 1) * a.diff(i)
                }
            }
            Sin(a) => Cos(a.clone()) * a.diff(i),
            Cos(a) => -(Sin(a.clone()) * a.diff(i)),
            Exp(a) => Exp(a.clone()) * a.diff(i),
            Log(a) => a.diff(i) / (**a).clone(),
            Sqrt(a) => a.diff(i) / (Const(2.0) * Sqrt(a.clone())),
        };
        d.simplify()
    }

    /// `k`-th derivative in variable 0.
    pub fn nth(&self, k: usize) -> Expr {
        (0..k).fold(self.clone(), |e, _| e.diff(0))
    }

    fn simplify(self) -> Expr {
        match self {
            Add(a, b) => {
                let (a, b) = (a.simplify(), b.simplify());
                match (&a, &b) {
                    (Const(x), Const(y)) => Const(x + y),
                    _ if a.is_const(0.0) => b,
                    _ if b.is_const(0.0) => a,
                    _ => Add(Box::new(a), Box::new(b)),
                }
            }
            Sub(a, b) => {
                let (a, b) = (a.simplify(), b.simplify());
                match (&a, &b) {
                    (Const(x), Const(y)) => Const(x - y),
                    _ if b.is_const(0.0) => a,
                    _ if a.is_const(0.0) => Neg(Box::new(b)).simplify(),
                    _ => Sub(Box::new(a), Box::new(b)),
                }
            }
            Mul(a, b) => {
                let (a, b) = (a.simplify(), b.simplify());
                match (&a, &b) {
                    (Const(x), Const(y)) => Const(x * y),
                    _ if a.is_const(0.0) || b.is_const(0.0) => Const(0.0),
                    _ if a.is_const(1.0) => b,
                    _ if b.is_const(1.0) => a,
                    _ => Mul(Box::new(a), Box::new(b)),
                }
            }
            Div(a, b) => {
                let (a, b) = (a.simplify(), b.simplify());
                match (&a, &b) {
                    (Const(x), Const(y)) => Const(x / y),
                    _ if a.is_const(0.0) => Const(0.0),
                    _ if b.is_const(1.0) => a,
                    _ => Div(Box::new(a), Box::new(b)),
                }
            }
            Neg(a) => match a.simplify() {
                Const(x) => Const(-x),
                Neg(b) => *b,
                other => Neg(Box::new(other)),
            },
            Powi(a, k) => match (a.simplify(), k) {
                (_, 0) => Const(1.0),
                (a, 1) => a,
                (Const(x), k) => Const(x.powi(k)),
                (a, k) => Powi(Box::new(a), k),
            },
            Sin(a) => Sin(Box::new(a.simplify())),
            Cos(a) => Cos(Box::new(a.simplify())),
            Exp(a) => Exp(Box::new(a.simplify())),
            Log(a) => Log(Box::new(a.simplify())),
            Sqrt(a) => Sqrt(Box::new(a.simplify())),
            e => e,
        }
    }

    /// Parses an infix expression; `vars` lists the admissible variable names by index.
    pub fn parse(src: &str, vars: &[&str]) -> Result<Expr> {
        let toks = lex(src)?;
        let mut p = Parser { toks, pos: 0, vars };
        let e = p.sum()?;
        if p.pos != p.toks.len() {
            return Err(Error::Model(format!("unexpected trailing input in '{src}'")));
        }
        Ok(e.simplify())
    }
}

impl std::ops::Add for Expr {
    type Output = Expr;
    fn add(self, o: Expr) -> Expr {
        Add(Box::new(self), Box::new(o))
    }
}

impl std::ops::Sub for Expr {
    type Output = Expr;
    fn sub(self, o: Expr) -> Expr {
        Sub(Box::new(self), Box::new(o))
    }
}

impl std::ops::Mul for Expr {
    type Output = Expr;
    fn mul(self, o: Expr) -> Expr {
        Mul(Box::new(self), Box::new(o))
    }
}

impl std::ops::Div for Expr {
    type Output = Expr;
    fn div(self, o: Expr) -> Expr {
        Div(Box::new(self), Box::new(o))
    }
}

impl std::ops::Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Neg(Box::new(self))
    }
}

pub fn sin(e: Expr) -> Expr {
    Sin(Box::new(e))
}

pub fn cos(e: Expr) -> Expr {
    Cos(Box::new(e))
}

pub fn exp(e: Expr) -> Expr {
    Exp(Box::new(e))
}

pub fn log(e: Expr) -> Expr {
    Log(Box::new(e))
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Const(c) => write!(f, "{c}"),
            Var(i) => write!(f, "x{i}"),
            Add(a, b) => write!(f, "({a} + {b})"),
            Sub(a, b) => write!(f, "({a} - {b})"),
            Mul(a, b) => write!(f, "({a} * {b})"),
            Div(a, b) => write!(f, "({a} / {b})"),
            Neg(a) => write!(f, "(-{a})"),
            Powi(a, k) => write!(f, "({a})^{k}"),
            Sin(a) => write!(f, "sin({a})"),
            Cos(a) => write!(f, "cos({a})"),
            Exp(a) => write!(f, "exp({a})"),
            Log(a) => write!(f, "log({a})"),
            Sqrt(a) => write!(f, "sqrt({a})"),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(char),
}

fn lex(src: &str) -> Result<Vec<Tok>> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.' || chars[i] == 'e' && i + 1 < chars.len() && (chars[i + 1].is_ascii_digit() || chars[i + 1] == '-')) {
                if chars[i] == 'e' {
                    i += 1;
                }
                i += 1;
            }
            let s: String = chars[start..i].iter().collect();
            out.push(Tok::Num(s.parse().map_err(|_| Error::Model(format!("bad number '{s}'")))?));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Ident(chars[start..i].iter().collect()));
        } else if "+-*/^()".contains(c) {
            out.push(Tok::Op(c));
            i += 1;
        } else {
            return Err(Error::Model(format!("unexpected character '{c}'")));
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    vars: &'a [&'a str],
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn eat(&mut self, c: char) -> bool {
        if self.peek() == Some(&Tok::Op(c)) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn sum(&mut self) -> Result<Expr> {
        let mut e = self.product()?;
        loop {
            if self.eat('+') {
                e = e + self.product()?;
            } else if self.eat('-') {
                e = e - self.product()?;
            } else {
                return Ok(e);
            }
        }
    }

    fn product(&mut self) -> Result<Expr> {
        let mut e = self.unary()?;
        loop {
            if self.eat('*') {
                e = e * self.unary()?;
            } else if self.eat('/') {
                e = e / self.unary()?;
            } else {
                return Ok(e);
            }
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.eat('-') {
            return Ok(-self.unary()?);
        }
        let base = self.atom()?;
        if self.eat('^') {
            let neg = self.eat('-');
            match self.toks.get(self.pos).cloned() {
                Some(Tok::Num(k)) if k.fract() == 0.0 => {
                    self.pos += 1;
                    let k = if neg { -(k as i32) } else { k as i32 };
                    Ok(Powi(Box::new(base), k))
                }
                _ => Err(Error::Model("exponent must be an integer literal".into())),
            }
        } else {
            Ok(base)
        }
    }

    fn atom(&mut self) -> Result<Expr> {
        match self.toks.get(self.pos).cloned() {
            Some(Tok::Num(x)) => {
                self.pos += 1;
                Ok(Const(x))
            }
            Some(Tok::Op('(')) => {
                self.pos += 1;
                let e = self.sum()?;
                if !self.eat(')') {
                    return Err(Error::Model("missing ')'".into()));
                }
                Ok(e)
            }
            Some(Tok::Ident(name)) => {
                self.pos += 1;
                if name == "pi" {
                    return Ok(Const(std::f64::consts::PI));
                }
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Var(i));
                }
                let wrap: fn(Box<Expr>) -> Expr = match name.as_str() {
                    "sin" => Sin,
                    "cos" => Cos,
                    "exp" => Exp,
                    "log" => Log,
                    "sqrt" => Sqrt,
                    _ => return Err(Error::Model(format!("unknown identifier '{name}'"))),
                };
                if !self.eat('(') {
                    return Err(Error::Model(format!("expected '(' after {name}")));
                }
                let arg = self.sum()?;
                if !self.eat(')') {
                    return Err(Error::Model("missing ')'".into()));
                }
                Ok(wrap(Box::new(arg)))
            }
            other => Err(Error::Model(format!("unexpected token {other:?}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_eval() {
        let e = Expr::parse("2 + sin(s)*s^2 - exp(-s)/3", &["s"]).unwrap();
        let s: f64 = 0.7;
        let want = 2.0 + s.sin() * s * s - (-s).exp() / 3.0;
        assert!((e.at(s) - want).abs() < 1e-15);
    }

    #[test]
    fn derivative_matches_hand_result() {
        let e = Expr::parse("log(2 + sin(s))", &["s"]).unwrap();
        let d = e.diff(0);
        for s in [0.1f64, 1.3, 4.0] {
            let want = s.cos() / (2.0 + s.sin());
            assert!((d.at(s) - want).abs() < 1e-14);
        }
        let d3 = Expr::parse("s^4", &["s"]).unwrap().nth(3);
        assert!((d3.at(2.0) - 48.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_unknown_names() {
        assert!(Expr::parse("tan(s)", &["s"]).is_err());
        assert!(Expr::parse("s +", &["s"]).is_err());
    }
}
