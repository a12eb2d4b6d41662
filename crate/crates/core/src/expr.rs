//! Scalar expressions in chart coordinates.
//!
//! Grammar:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := atom ('^' factor)?
//! atom   := number | ident | ident '(' expr ')' | '(' expr ')' | '-' atom
//! ```
//!
//! Unary minus binds tighter than `^`, so `-x^2` is `(-x)^2`; write `-(x^2)`
//! for the other reading. Recognised functions are `sin cos tan exp log sqrt
//! tanh`, each of one argument.

use crate::jet::Jet;
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at position {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown identifier `{name}` at position {position}")]
    UnknownIdentifier { name: String, position: usize },
    #[error("function `{name}` takes 1 argument, got {got} (position {position})")]
    Arity { name: String, got: usize, position: usize },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("expression `{expr}` has a pole at {point:?}")]
    Pole { expr: String, point: Vec<f64> },
    #[error("expression `{expr}` leaves the domain of `{func}` at {point:?}")]
    Domain { expr: String, func: &'static str, point: Vec<f64> },
    #[error("expression `{expr}` is not finite at {point:?}")]
    NonFinite { expr: String, point: Vec<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Tanh,
}

impl Func {
    fn from_name(s: &str) -> Option<Func> {
        Some(match s {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "tanh" => Func::Tanh,
            _ => return None,
        })
    }

    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tan => "tan",
            Func::Exp => "exp",
            Func::Log => "log",
            Func::Sqrt => "sqrt",
            Func::Tanh => "tanh",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Num(f64),
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
    fn constant(&self) -> Option<f64> {
        Some(match self {
            Node::Num(x) => *x,
            Node::Var(_) => return None,
            Node::Neg(a) => -a.constant()?,
            Node::Add(a, b) => a.constant()? + b.constant()?,
            Node::Sub(a, b) => a.constant()? - b.constant()?,
            Node::Mul(a, b) => a.constant()? * b.constant()?,
            Node::Div(a, b) => a.constant()? / b.constant()?,
            Node::Pow(a, b) => {
                let (x, p) = (a.constant()?, b.constant()?);
                if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 {
                    x.powi(p as i32)
                } else {
                    x.powf(p)
                }
            }
            Node::Call(f, a) => a.constant()?.s_func(*f),
        })
        .filter(|x| x.is_finite())
    }
}

/// Arithmetic needed to evaluate an expression tree.
pub trait Scalar: Clone {
    fn constant_like(&self, c: f64) -> Self;
    fn value(&self) -> f64;
    fn has_derivatives(&self) -> bool;
    fn s_add(&self, o: &Self) -> Self;
    fn s_sub(&self, o: &Self) -> Self;
    fn s_mul(&self, o: &Self) -> Self;
    fn s_div(&self, o: &Self) -> Self;
    fn s_neg(&self) -> Self;
    fn s_powi(&self, p: i32) -> Self;
    fn s_powf(&self, p: f64) -> Self;
    fn s_func(&self, f: Func) -> Self;
}

impl Scalar for f64 {
    fn constant_like(&self, c: f64) -> Self {
        c
    }
    fn value(&self) -> f64 {
        *self
    }
    fn has_derivatives(&self) -> bool {
        false
    }
    fn s_add(&self, o: &Self) -> Self {
        self + o
    }
    fn s_sub(&self, o: &Self) -> Self {
        self - o
    }
    fn s_mul(&self, o: &Self) -> Self {
        self * o
    }
    fn s_div(&self, o: &Self) -> Self {
        self / o
    }
    fn s_neg(&self) -> Self {
        -self
    }
    fn s_powi(&self, p: i32) -> Self {
        self.powi(p)
    }
    fn s_powf(&self, p: f64) -> Self {
        self.powf(p)
    }
    fn s_func(&self, f: Func) -> Self {
        match f {
            Func::Sin => self.sin(),
            Func::Cos => self.cos(),
            Func::Tan => self.tan(),
            Func::Exp => self.exp(),
            Func::Log => self.ln(),
            Func::Sqrt => self.sqrt(),
            Func::Tanh => self.tanh(),
        }
    }
}

impl Scalar for Jet {
    fn constant_like(&self, c: f64) -> Self {
        Jet::constant_like(self, c)
    }
    fn value(&self) -> f64 {
        Jet::value(self)
    }
    fn has_derivatives(&self) -> bool {
        self.order() > 0
    }
    fn s_add(&self, o: &Self) -> Self {
        self.add(o)
    }
    fn s_sub(&self, o: &Self) -> Self {
        self.sub(o)
    }
    fn s_mul(&self, o: &Self) -> Self {
        self.mul(o)
    }
    fn s_div(&self, o: &Self) -> Self {
        self.div(o)
    }
    fn s_neg(&self) -> Self {
        self.neg()
    }
    fn s_powi(&self, p: i32) -> Self {
        self.powi(p)
    }
    fn s_powf(&self, p: f64) -> Self {
        self.powf(p)
    }
    fn s_func(&self, f: Func) -> Self {
        match f {
            Func::Sin => self.sin(),
            Func::Cos => self.cos(),
            Func::Tan => self.tan(),
            Func::Exp => self.exp(),
            Func::Log => self.ln(),
            Func::Sqrt => self.sqrt(),
            Func::Tanh => self.tanh(),
        }
    }
}

/// A parsed expression together with its variable names.
#[derive(Clone, PartialEq)]
pub struct Expr {
    source: String,
    vars: Vec<String>,
    root: Node,
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

impl Expr {
    pub fn parse<S: AsRef<str>>(source: &str, vars: &[S]) -> Result<Expr, ParseError> {
        let vars: Vec<String> = vars.iter().map(|s| s.as_ref().to_string()).collect();
        let mut p = Parser { chars: source.char_indices().collect(), pos: 0, len: source.len(), vars: &vars };
        p.skip_ws();
        let root = p.expr()?;
        p.skip_ws();
        if let Some(&(at, c)) = p.chars.get(p.pos) {
            return Err(ParseError::Syntax { position: at, message: format!("unexpected `{c}`") });
        }
        Ok(Expr { source: source.to_string(), vars, root })
    }

    pub fn constant(value: f64, vars: &[String]) -> Expr {
        Expr { source: format!("{value:?}"), vars: vars.to_vec(), root: Node::Num(value) }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    pub fn root(&self) -> &Node {
        &self.root
    }

    /// The constant value if the tree contains no variables.
    pub fn as_constant(&self) -> Option<f64> {
        self.root.constant()
    }

    pub fn eval_f64(&self, point: &[f64]) -> Result<f64, EvalError> {
        self.eval(point, point)
    }

    /// Evaluates with `args[i]` substituted for variable `i`; `point` is used in
    /// error reports.
    pub fn eval<S: Scalar>(&self, args: &[S], point: &[f64]) -> Result<S, EvalError> {
        assert_eq!(args.len(), self.vars.len(), "argument count mismatch");
        let ctx = EvalCtx { expr: self, point };
        ctx.eval(&self.root, args)
    }
}

struct EvalCtx<'a> {
    expr: &'a Expr,
    point: &'a [f64],
}

impl EvalCtx<'_> {
    fn domain(&self, func: &'static str) -> EvalError {
        EvalError::Domain { expr: self.expr.source.clone(), func, point: self.point.to_vec() }
    }

    fn eval<S: Scalar>(&self, n: &Node, args: &[S]) -> Result<S, EvalError> {
        let r = match n {
            Node::Num(x) => args[0].constant_like(*x),
            Node::Var(i) => args[*i].clone(),
            Node::Neg(a) => self.eval(a, args)?.s_neg(),
            Node::Add(a, b) => self.eval(a, args)?.s_add(&self.eval(b, args)?),
            Node::Sub(a, b) => self.eval(a, args)?.s_sub(&self.eval(b, args)?),
            Node::Mul(a, b) => self.eval(a, args)?.s_mul(&self.eval(b, args)?),
            Node::Div(a, b) => {
                let num = self.eval(a, args)?;
                let den = self.eval(b, args)?;
                if den.value() == 0.0 {
                    return Err(EvalError::Pole {
                        expr: self.expr.source.clone(),
                        point: self.point.to_vec(),
                    });
                }
                num.s_div(&den)
            }
            Node::Pow(a, b) => {
                let base = self.eval(a, args)?;
                match b.constant() {
                    Some(p) if p.fract() == 0.0 && p.abs() <= i32::MAX as f64 => {
                        if p < 0.0 && base.value() == 0.0 {
                            return Err(EvalError::Pole {
                                expr: self.expr.source.clone(),
                                point: self.point.to_vec(),
                            });
                        }
                        base.s_powi(p as i32)
                    }
                    Some(p) => {
                        let x = base.value();
                        if x < 0.0 || (x == 0.0 && (p < 0.0 || base.has_derivatives())) {
                            return Err(self.domain("^"));
                        }
                        base.s_powf(p)
                    }
                    None => {
                        if base.value() <= 0.0 {
                            return Err(self.domain("^"));
                        }
                        let e = self.eval(b, args)?;
                        base.s_func(Func::Log).s_mul(&e).s_func(Func::Exp)
                    }
                }
            }
            Node::Call(f, a) => {
                let x = self.eval(a, args)?;
                let v = x.value();
                match f {
                    Func::Log if v <= 0.0 => return Err(self.domain("log")),
                    Func::Sqrt if v < 0.0 || (v == 0.0 && x.has_derivatives()) => {
                        return Err(self.domain("sqrt"))
                    }
                    Func::Tan if v.cos() == 0.0 => return Err(self.domain("tan")),
                    _ => {}
                }
                x.s_func(*f)
            }
        };
        if !r.value().is_finite() {
            return Err(EvalError::NonFinite {
                expr: self.expr.source.clone(),
                point: self.point.to_vec(),
            });
        }
        Ok(r)
    }
}

struct Parser<'a> {
    chars: Vec<(usize, char)>,
    pos: usize,
    len: usize,
    vars: &'a [String],
}

impl Parser<'_> {
    fn at(&self) -> usize {
        self.chars.get(self.pos).map_or(self.len, |&(i, _)| i)
    }

    fn peek(&self) -> Option<char> {
        self.chars.get(self.pos).map(|&(_, c)| c)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.pos += 1;
        }
    }

    fn eat(&mut self, c: char) -> bool {
        self.skip_ws();
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
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

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            if self.eat('*') {
                lhs = Node::Mul(Box::new(lhs), Box::new(self.factor()?));
            } else if self.eat('/') {
                lhs = Node::Div(Box::new(lhs), Box::new(self.factor()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn factor(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.eat('^') {
            let exp = self.factor()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        self.skip_ws();
        let start = self.at();
        match self.peek() {
            None => Err(ParseError::Syntax {
                position: start,
                message: "unexpected end of input".into(),
            }),
            Some('-') => {
                self.pos += 1;
                Ok(Node::Neg(Box::new(self.atom()?)))
            }
            Some('(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(')') {
                    return Err(ParseError::Syntax { position: self.at(), message: "expected `)`".into() });
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == '.' => self.number(),
            Some(c) if c.is_alphabetic() || c == '_' => self.ident(),
            Some(c) => Err(ParseError::Syntax { position: start, message: format!("unexpected `{c}`") }),
        }
    }

    fn number(&mut self) -> Result<Node, ParseError> {
        let start_pos = self.pos;
        let start = self.at();
        while self.peek().is_some_and(|c| c.is_ascii_digit() || c == '.') {
            self.pos += 1;
        }
        if matches!(self.peek(), Some('e' | 'E')) {
            let save = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some('+' | '-')) {
                self.pos += 1;
            }
            if self.peek().is_some_and(|c| c.is_ascii_digit()) {
                while self.peek().is_some_and(|c| c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                self.pos = save;
            }
        }
        let text: String = self.chars[start_pos..self.pos].iter().map(|&(_, c)| c).collect();
        text.parse::<f64>()
            .map(Node::Num)
            .map_err(|_| ParseError::Syntax { position: start, message: format!("bad number `{text}`") })
    }

    fn ident(&mut self) -> Result<Node, ParseError> {
        let start_pos = self.pos;
        let start = self.at();
        while self.peek().is_some_and(|c| c.is_alphanumeric() || c == '_') {
            self.pos += 1;
        }
        let name: String = self.chars[start_pos..self.pos].iter().map(|&(_, c)| c).collect();
        self.skip_ws();
        if self.peek() == Some('(') {
            let Some(f) = Func::from_name(&name) else {
                return Err(ParseError::UnknownIdentifier { name, position: start });
            };
            self.pos += 1;
            let arg = self.expr()?;
            let mut got = 1;
            while self.eat(',') {
                self.expr()?;
                got += 1;
            }
            if !self.eat(')') {
                return Err(ParseError::Syntax { position: self.at(), message: "expected `)`".into() });
            }
            if got != 1 {
                return Err(ParseError::Arity { name: f.name().into(), got, position: start });
            }
            return Ok(Node::Call(f, Box::new(arg)));
        }
        match self.vars.iter().position(|v| *v == name) {
            Some(i) => Ok(Node::Var(i)),
            None => Err(ParseError::UnknownIdentifier { name, position: start }),
        }
    }
}
