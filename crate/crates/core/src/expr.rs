//! A small arithmetic expression language over `(t, x, u, v)`.
//!
//! Game dynamics and terminal payoffs loaded from config files are written
//! in this language and compiled to an [`Expr`] tree once, at load time.
//!
//! Grammar (usual precedence, `^` right-associative):
//!
//! ```text
//! expr    := term (('+' | '-') term)*
//! term    := unary (('*' | '/') unary)*
//! unary   := '-' unary | power
//! power   := atom ('^' unary)?
//! atom    := number | ident | ident '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Variables: `t`; `x` (first state component) and `x1 … xd`; `u`, `u1 …`;
//! `v`, `v1 …`. Constants: `pi`, `e`. Functions: `abs`, `sqrt`, `exp`, `ln`,
//! `sin`, `cos`, `tanh`, `sign`, `hat`, `min`, `max`.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message} at offset {offset} in `{source_text}`")]
pub struct ParseError {
    pub message: String,
    pub offset: usize,
    pub source_text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    T,
    X(usize),
    U(usize),
    V(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Abs,
    Sqrt,
    Exp,
    Ln,
    Sin,
    Cos,
    Tanh,
    Sign,
    Hat,
    Min,
    Max,
}

impl Func {
    fn lookup(name: &str) -> Option<Func> {
        Some(match name {
            "abs" => Func::Abs,
            "sqrt" => Func::Sqrt,
            "exp" => Func::Exp,
            "ln" => Func::Ln,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            "sign" => Func::Sign,
            "hat" => Func::Hat,
            "min" => Func::Min,
            "max" => Func::Max,
            _ => return None,
        })
    }

    /// `None` means variadic with at least one argument.
    fn arity(self) -> Option<usize> {
        match self {
            Func::Min | Func::Max => None,
            _ => Some(1),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Vec<Expr>),
}

/// Values bound to the variables of an expression.
#[derive(Debug, Clone, Copy)]
pub struct Env<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub u: &'a [f64],
    pub v: &'a [f64],
}

impl<'a> Env<'a> {
    pub fn state(x: &'a [f64]) -> Self {
        Env {
            t: 0.0,
            x,
            u: &[],
            v: &[],
        }
    }
}

/// Largest index referenced for each variable family, plus whether `t` occurs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Usage {
    pub time: bool,
    pub x: Option<usize>,
    pub u: Option<usize>,
    pub v: Option<usize>,
}

impl Usage {
    fn merge(self, other: Usage) -> Usage {
        Usage {
            time: self.time || other.time,
            x: self.x.max(other.x),
            u: self.u.max(other.u),
            v: self.v.max(other.v),
        }
    }
}

pub fn hat(x: f64) -> f64 {
    (1.0 - x.abs()).max(0.0)
}

impl Expr {
    pub fn parse(src: &str) -> Result<Expr, ParseError> {
        let mut parser = Parser {
            src,
            bytes: src.as_bytes(),
            pos: 0,
        };
        let expr = parser.expr()?;
        parser.skip_ws();
        if parser.pos != parser.bytes.len() {
            return Err(parser.error("unexpected trailing input"));
        }
        Ok(expr)
    }

    /// Evaluates the expression. Out-of-range variable indices read as NaN,
    /// so callers validate with [`Expr::usage`] at load time.
    pub fn eval(&self, env: &Env<'_>) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(var) => match *var {
                Var::T => env.t,
                Var::X(i) => env.x.get(i).copied().unwrap_or(f64::NAN),
                Var::U(i) => env.u.get(i).copied().unwrap_or(f64::NAN),
                Var::V(i) => env.v.get(i).copied().unwrap_or(f64::NAN),
            },
            Expr::Neg(inner) => -inner.eval(env),
            Expr::Binary(op, lhs, rhs) => {
                let a = lhs.eval(env);
                let b = rhs.eval(env);
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => a / b,
                    BinOp::Pow => a.powf(b),
                }
            }
            Expr::Call(func, args) => {
                let first = args[0].eval(env);
                match func {
                    Func::Abs => first.abs(),
                    Func::Sqrt => first.sqrt(),
                    Func::Exp => first.exp(),
                    Func::Ln => first.ln(),
                    Func::Sin => first.sin(),
                    Func::Cos => first.cos(),
                    Func::Tanh => first.tanh(),
                    Func::Sign => {
                        if first > 0.0 {
                            1.0
                        } else if first < 0.0 {
                            -1.0
                        } else {
                            0.0
                        }
                    }
                    Func::Hat => hat(first),
                    Func::Min => args[1..].iter().fold(first, |m, a| m.min(a.eval(env))),
                    Func::Max => args[1..].iter().fold(first, |m, a| m.max(a.eval(env))),
                }
            }
        }
    }

    pub fn usage(&self) -> Usage {
        match self {
            Expr::Const(_) => Usage::default(),
            Expr::Var(var) => match *var {
                Var::T => Usage {
                    time: true,
                    ..Usage::default()
                },
                Var::X(i) => Usage {
                    x: Some(i),
                    ..Usage::default()
                },
                Var::U(i) => Usage {
                    u: Some(i),
                    ..Usage::default()
                },
                Var::V(i) => Usage {
                    v: Some(i),
                    ..Usage::default()
                },
            },
            Expr::Neg(inner) => inner.usage(),
            Expr::Binary(_, a, b) => a.usage().merge(b.usage()),
            Expr::Call(_, args) => args
                .iter()
                .fold(Usage::default(), |acc, a| acc.merge(a.usage())),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Const(c) => write!(f, "{c}"),
            Expr::Var(Var::T) => write!(f, "t"),
            Expr::Var(Var::X(i)) => write!(f, "x{}", i + 1),
            Expr::Var(Var::U(i)) => write!(f, "u{}", i + 1),
            Expr::Var(Var::V(i)) => write!(f, "v{}", i + 1),
            Expr::Neg(inner) => write!(f, "(-{inner})"),
            Expr::Binary(op, a, b) => {
                let sym = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a} {sym} {b})")
            }
            Expr::Call(func, args) => {
                let name = format!("{func:?}").to_lowercase();
                write!(f, "{name}(")?;
                for (k, a) in args.iter().enumerate() {
                    if k > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{a}")?;
                }
                write!(f, ")")
            }
        }
    }
}

struct Parser<'a> {
    src: &'a str,
    bytes: &'a [u8],
    pos: usize,
}

impl Parser<'_> {
    fn error(&self, message: &str) -> ParseError {
        ParseError {
            message: message.to_string(),
            offset: self.pos,
            source_text: self.src.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.bytes.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(b'+') => BinOp::Add,
                Some(b'-') => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(b'*') => BinOp::Mul,
                Some(b'/') => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat(b'-') {
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                other => Expr::Neg(Box::new(other)),
            });
        }
        if self.eat(b'+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat(b'^') {
            let exponent = self.unary()?;
            return Ok(Expr::Binary(BinOp::Pow, Box::new(base), Box::new(exponent)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr()?;
                if !self.eat(b')') {
                    return Err(self.error("expected `)`"));
                }
                Ok(inner)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.ident(),
            Some(_) => Err(self.error("unexpected character")),
            None => Err(self.error("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_digit() || self.bytes[self.pos] == b'.')
        {
            self.pos += 1;
        }
        if self.pos < self.bytes.len() && matches!(self.bytes[self.pos], b'e' | b'E') {
            let save = self.pos;
            self.pos += 1;
            if self.pos < self.bytes.len() && matches!(self.bytes[self.pos], b'+' | b'-') {
                self.pos += 1;
            }
            let digits = self.pos;
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
                self.pos += 1;
            }
            if digits == self.pos {
                self.pos = save;
            }
        }
        self.src[start..self.pos]
            .parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| ParseError {
                message: "malformed number".into(),
                offset: start,
                source_text: self.src.to_string(),
            })
    }

    fn ident(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while self.pos < self.bytes.len()
            && (self.bytes[self.pos].is_ascii_alphanumeric() || self.bytes[self.pos] == b'_')
        {
            self.pos += 1;
        }
        let name = &self.src[start..self.pos];
        if self.peek() == Some(b'(') {
            let func = Func::lookup(name).ok_or_else(|| ParseError {
                message: format!("unknown function `{name}`"),
                offset: start,
                source_text: self.src.to_string(),
            })?;
            self.pos += 1;
            let mut args = vec![self.expr()?];
            while self.eat(b',') {
                args.push(self.expr()?);
            }
            if !self.eat(b')') {
                return Err(self.error("expected `)` after arguments"));
            }
            if let Some(n) = func.arity() {
                if args.len() != n {
                    return Err(ParseError {
                        message: format!("`{name}` takes {n} argument(s), got {}", args.len()),
                        offset: start,
                        source_text: self.src.to_string(),
                    });
                }
            }
            return Ok(Expr::Call(func, args));
        }
        let var = match name {
            "t" => return Ok(Expr::Var(Var::T)),
            "pi" => return Ok(Expr::Const(std::f64::consts::PI)),
            "e" => return Ok(Expr::Const(std::f64::consts::E)),
            "x" => Var::X(0),
            "u" => Var::U(0),
            "v" => Var::V(0),
            _ => {
                let (head, digits) = name.split_at(1);
                let index = digits
                    .parse::<usize>()
                    .ok()
                    .filter(|&k| k >= 1 && !digits.starts_with('0'));
                match (head, index) {
                    ("x", Some(k)) => Var::X(k - 1),
                    ("u", Some(k)) => Var::U(k - 1),
                    ("v", Some(k)) => Var::V(k - 1),
                    _ => {
                        return Err(ParseError {
                            message: format!("unknown identifier `{name}`"),
                            offset: start,
                            source_text: self.src.to_string(),
                        })
                    }
                }
            }
        };
        Ok(Expr::Var(var))
    }
}
