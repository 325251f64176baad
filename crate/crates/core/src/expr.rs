//! Expression language for Hamiltonians.
//!
//! ```text
//! expr   := term (("+"|"-") term)*
//! term   := factor (("*"|"/") factor)*
//! factor := "-" factor | base ("^" integer)?
//! base   := number | "pi" | ident | func "(" expr ")" | "(" expr ")"
//! func   := "sin" | "cos" | "exp"
//! ident  := "q" | "p" | "q1" | "q2" | "p1" | "p2"
//! ```
//!
//! Divisors must be free of variables, so every parsed expression is total
//! on the whole phase space.

use std::fmt;

use crate::error::ParseError;

/// Slot of a phase-space coordinate in the evaluation vector `[q1, q2, p1, p2]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Var {
    Q(usize),
    P(usize),
}

impl Var {
    pub fn slot(self) -> usize {
        match self {
            Var::Q(i) => i,
            Var::P(i) => 2 + i,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
}

impl Func {
    fn name(self) -> &'static str {
        match self {
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Exp => "exp",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Num(f64),
    Pi,
    Var(Var),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
    Call(Func, Box<Expr>),
}

impl Expr {
    pub fn depends_on_vars(&self) -> bool {
        match self {
            Expr::Num(_) | Expr::Pi => false,
            Expr::Var(_) => true,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.depends_on_vars(),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.depends_on_vars() || b.depends_on_vars()
            }
        }
    }

    pub fn depends_on(&self, v: Var) -> bool {
        match self {
            Expr::Num(_) | Expr::Pi => false,
            Expr::Var(w) => *w == v,
            Expr::Neg(a) | Expr::Pow(a, _) | Expr::Call(_, a) => a.depends_on(v),
            Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                a.depends_on(v) || b.depends_on(v)
            }
        }
    }

    /// Tree-walking evaluation; `x = [q1, q2, p1, p2]`.
    pub fn eval(&self, x: &[f64; 4]) -> f64 {
        match self {
            Expr::Num(c) => *c,
            Expr::Pi => std::f64::consts::PI,
            Expr::Var(v) => x[v.slot()],
            Expr::Neg(a) => -a.eval(x),
            Expr::Add(a, b) => a.eval(x) + b.eval(x),
            Expr::Sub(a, b) => a.eval(x) - b.eval(x),
            Expr::Mul(a, b) => a.eval(x) * b.eval(x),
            Expr::Div(a, b) => a.eval(x) / b.eval(x),
            Expr::Pow(a, n) => a.eval(x).powi(*n as i32),
            Expr::Call(f, a) => {
                let y = a.eval(x);
                match f {
                    Func::Sin => y.sin(),
                    Func::Cos => y.cos(),
                    Func::Exp => y.exp(),
                }
            }
        }
    }

    /// Symbolic partial derivative, lightly simplified.
    pub fn derivative(&self, v: Var) -> Expr {
        use Expr::*;
        if !self.depends_on(v) {
            return Num(0.0);
        }
        match self {
            Num(_) | Pi => Num(0.0),
            Var(w) => Num(if *w == v { 1.0 } else { 0.0 }),
            Neg(a) => neg(a.derivative(v)),
            Add(a, b) => add(a.derivative(v), b.derivative(v)),
            Sub(a, b) => sub(a.derivative(v), b.derivative(v)),
            Mul(a, b) => add(
                mul(a.derivative(v), (**b).clone()),
                mul((**a).clone(), b.derivative(v)),
            ),
            // divisor is constant by construction
            Div(a, b) => div(a.derivative(v), (**b).clone()),
            Pow(a, n) => match n {
                0 => Num(0.0),
                1 => a.derivative(v),
                _ => mul(
                    mul(Num(*n as f64), pow((**a).clone(), n - 1)),
                    a.derivative(v),
                ),
            },
            Call(f, a) => {
                let inner = a.derivative(v);
                let outer = match f {
                    Func::Sin => Call(Func::Cos, a.clone()),
                    Func::Cos => neg(Call(Func::Sin, a.clone())),
                    Func::Exp => Call(Func::Exp, a.clone()),
                };
                mul(outer, inner)
            }
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Add(..) | Expr::Sub(..) => 1,
            Expr::Mul(..) | Expr::Div(..) => 2,
            Expr::Neg(..) => 3,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

fn is_num(e: &Expr, c: f64) -> bool {
    matches!(e, Expr::Num(x) if *x == c)
}

fn neg(a: Expr) -> Expr {
    match a {
        Expr::Num(c) => Expr::Num(-c),
        Expr::Neg(inner) => *inner,
        other => Expr::Neg(Box::new(other)),
    }
}

fn add(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x + y),
        _ if is_num(&a, 0.0) => b,
        _ if is_num(&b, 0.0) => a,
        _ => Expr::Add(Box::new(a), Box::new(b)),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x - y),
        _ if is_num(&b, 0.0) => a,
        _ if is_num(&a, 0.0) => neg(b),
        _ => Expr::Sub(Box::new(a), Box::new(b)),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        (Expr::Num(x), Expr::Num(y)) => Expr::Num(x * y),
        _ if is_num(&a, 0.0) || is_num(&b, 0.0) => Expr::Num(0.0),
        _ if is_num(&a, 1.0) => b,
        _ if is_num(&b, 1.0) => a,
        _ => Expr::Mul(Box::new(a), Box::new(b)),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (&a, &b) {
        _ if is_num(&a, 0.0) => Expr::Num(0.0),
        _ if is_num(&b, 1.0) => a,
        _ => Expr::Div(Box::new(a), Box::new(b)),
    }
}

fn pow(a: Expr, n: u32) -> Expr {
    match n {
        0 => Expr::Num(1.0),
        1 => a,
        _ => Expr::Pow(Box::new(a), n),
    }
}

fn fmt_num(c: f64, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    // `{:?}` round-trips f64 exactly
    if c.fract() == 0.0 && c.abs() < 1e15 {
        write!(f, "{}", c as i64)
    } else {
        write!(f, "{:?}", c)
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let wrap = |e: &Expr, min: u8, f: &mut fmt::Formatter<'_>| -> fmt::Result {
            if e.precedence() < min || matches!(e, Expr::Num(c) if *c < 0.0) {
                write!(f, "({})", e)
            } else {
                write!(f, "{}", e)
            }
        };
        match self {
            Expr::Num(c) => fmt_num(*c, f),
            Expr::Pi => write!(f, "pi"),
            Expr::Var(Var::Q(i)) => write!(f, "q{}", i + 1),
            Expr::Var(Var::P(i)) => write!(f, "p{}", i + 1),
            Expr::Neg(a) => {
                write!(f, "-")?;
                wrap(a, 3, f)
            }
            Expr::Add(a, b) => {
                wrap(a, 1, f)?;
                write!(f, " + ")?;
                wrap(b, 2, f)
            }
            Expr::Sub(a, b) => {
                wrap(a, 1, f)?;
                write!(f, " - ")?;
                wrap(b, 2, f)
            }
            Expr::Mul(a, b) => {
                wrap(a, 2, f)?;
                write!(f, "*")?;
                wrap(b, 3, f)
            }
            Expr::Div(a, b) => {
                wrap(a, 2, f)?;
                write!(f, "/")?;
                wrap(b, 3, f)
            }
            Expr::Pow(a, n) => {
                wrap(a, 5, f)?;
                write!(f, "^{}", n)
            }
            Expr::Call(func, a) => write!(f, "{}({})", func.name(), a),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Int(u32),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    End,
}

struct Lexer<'a> {
    src: &'a str,
    toks: Vec<(Tok, usize)>,
}

impl<'a> Lexer<'a> {
    fn run(src: &'a str) -> Result<Vec<(Tok, usize)>, ParseError> {
        let mut lx = Lexer { src, toks: Vec::new() };
        let bytes = src.as_bytes();
        let mut i = 0;
        while i < bytes.len() {
            let c = bytes[i] as char;
            if c.is_ascii_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            let tok = match c {
                '+' => Tok::Plus,
                '-' => Tok::Minus,
                '*' => Tok::Star,
                '/' => Tok::Slash,
                '^' => Tok::Caret,
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                d if d.is_ascii_digit() || d == '.' => {
                    let mut j = i;
                    while j < bytes.len() && (bytes[j].is_ascii_digit() || bytes[j] == b'.') {
                        j += 1;
                    }
                    // optional exponent
                    if j < bytes.len() && (bytes[j] == b'e' || bytes[j] == b'E') {
                        let mut k = j + 1;
                        if k < bytes.len() && (bytes[k] == b'+' || bytes[k] == b'-') {
                            k += 1;
                        }
                        if k < bytes.len() && bytes[k].is_ascii_digit() {
                            while k < bytes.len() && bytes[k].is_ascii_digit() {
                                k += 1;
                            }
                            j = k;
                        }
                    }
                    let text = &lx.src[i..j];
                    let value: f64 = text.parse().map_err(|_| {
                        ParseError::syntax(start, format!("malformed number '{text}'"))
                    })?;
                    i = j;
                    let is_int = text.bytes().all(|b| b.is_ascii_digit());
                    lx.toks.push((
                        if is_int && value <= u32::MAX as f64 {
                            Tok::Int(value as u32)
                        } else {
                            Tok::Num(value)
                        },
                        start,
                    ));
                    continue;
                }
                a if a.is_ascii_alphabetic() => {
                    let mut j = i;
                    while j < bytes.len() && bytes[j].is_ascii_alphanumeric() {
                        j += 1;
                    }
                    let word = lx.src[i..j].to_string();
                    i = j;
                    lx.toks.push((Tok::Ident(word), start));
                    continue;
                }
                other => {
                    return Err(ParseError::syntax(
                        start,
                        format!("unexpected character '{other}'"),
                    ))
                }
            };
            lx.toks.push((tok, start));
            i += 1;
        }
        lx.toks.push((Tok::End, src.len()));
        Ok(lx.toks)
    }
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    dim: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.toks[self.pos].0
    }

    fn offset(&self) -> usize {
        self.toks[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.pos].0.clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Tok::Plus => {
                    self.bump();
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Tok::Minus => {
                    self.bump();
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.factor()?;
        loop {
            match self.peek() {
                Tok::Star => {
                    self.bump();
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.factor()?));
                }
                Tok::Slash => {
                    self.bump();
                    let at = self.offset();
                    let rhs = self.factor()?;
                    if rhs.depends_on_vars() {
                        return Err(ParseError::NonConstantDivisor { offset: at });
                    }
                    if rhs.eval(&[0.0; 4]) == 0.0 {
                        return Err(ParseError::syntax(at, "division by zero".into()));
                    }
                    lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn factor(&mut self) -> Result<Expr, ParseError> {
        if *self.peek() == Tok::Minus {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.factor()?)));
        }
        let base = self.base()?;
        if *self.peek() == Tok::Caret {
            self.bump();
            let at = self.offset();
            match self.bump() {
                Tok::Int(n) => Ok(Expr::Pow(Box::new(base), n)),
                _ => Err(ParseError::syntax(at, "expected integer exponent".into())),
            }
        } else {
            Ok(base)
        }
    }

    fn base(&mut self) -> Result<Expr, ParseError> {
        let at = self.offset();
        match self.bump() {
            Tok::Num(c) => Ok(Expr::Num(c)),
            Tok::Int(n) => Ok(Expr::Num(n as f64)),
            Tok::LParen => {
                let e = self.expr()?;
                self.expect_rparen()?;
                Ok(e)
            }
            Tok::Ident(name) => self.ident(&name, at),
            Tok::End => Err(ParseError::syntax(at, "unexpected end of input".into())),
            other => Err(ParseError::syntax(at, format!("unexpected token {other:?}"))),
        }
    }

    fn expect_rparen(&mut self) -> Result<(), ParseError> {
        let at = self.offset();
        match self.bump() {
            Tok::RParen => Ok(()),
            _ => Err(ParseError::syntax(at, "expected ')'".into())),
        }
    }

    fn ident(&mut self, name: &str, at: usize) -> Result<Expr, ParseError> {
        let func = match name {
            "sin" => Some(Func::Sin),
            "cos" => Some(Func::Cos),
            "exp" => Some(Func::Exp),
            _ => None,
        };
        if let Some(func) = func {
            let lp = self.offset();
            if self.bump() != Tok::LParen {
                return Err(ParseError::syntax(lp, format!("expected '(' after {name}")));
            }
            let arg = self.expr()?;
            self.expect_rparen()?;
            return Ok(Expr::Call(func, Box::new(arg)));
        }
        if name == "pi" {
            return Ok(Expr::Pi);
        }
        let var = match name {
            "q" | "p" if self.dim != 1 => {
                return Err(ParseError::DimensionMismatch {
                    offset: at,
                    ident: name.to_string(),
                    dim: self.dim,
                })
            }
            "q" | "q1" => Var::Q(0),
            "p" | "p1" => Var::P(0),
            "q2" => Var::Q(1),
            "p2" => Var::P(1),
            _ => {
                return Err(ParseError::UnknownIdentifier {
                    offset: at,
                    ident: name.to_string(),
                })
            }
        };
        let idx = match var {
            Var::Q(i) | Var::P(i) => i,
        };
        if idx >= self.dim {
            return Err(ParseError::DimensionMismatch {
                offset: at,
                ident: name.to_string(),
                dim: self.dim,
            });
        }
        Ok(Expr::Var(var))
    }
}

/// Parses `src` as an expression over the phase-space coordinates of `T*T^dim`.
pub fn parse(src: &str, dim: usize) -> Result<Expr, ParseError> {
    if !(1..=2).contains(&dim) {
        return Err(ParseError::UnsupportedDimension(dim));
    }
    let toks = Lexer::run(src)?;
    let mut parser = Parser { toks, pos: 0, dim };
    let e = parser.expr()?;
    match parser.peek() {
        Tok::End => Ok(e),
        _ => Err(ParseError::syntax(parser.offset(), "trailing input".into())),
    }
}

#[derive(Clone, Copy, Debug)]
enum Op {
    Const(f64),
    Load(u8),
    Neg,
    Add,
    Sub,
    Mul,
    Div,
    Powi(i32),
    Sin,
    Cos,
    Exp,
}

/// Stack-machine form of an [`Expr`]; evaluation is allocation free.
#[derive(Clone, Debug)]
pub struct Compiled {
    ops: Vec<Op>,
    depth: usize,
}

const STACK: usize = 64;

impl Compiled {
    pub fn new(e: &Expr) -> Self {
        fn emit(e: &Expr, ops: &mut Vec<Op>, cur: usize, max: &mut usize) -> usize {
            let bump = |max: &mut usize, d: usize| {
                if d > *max {
                    *max = d;
                }
            };
            match e {
                Expr::Num(c) => {
                    ops.push(Op::Const(*c));
                    bump(max, cur + 1);
                    cur + 1
                }
                Expr::Pi => {
                    ops.push(Op::Const(std::f64::consts::PI));
                    bump(max, cur + 1);
                    cur + 1
                }
                Expr::Var(v) => {
                    ops.push(Op::Load(v.slot() as u8));
                    bump(max, cur + 1);
                    cur + 1
                }
                Expr::Neg(a) => {
                    let d = emit(a, ops, cur, max);
                    ops.push(Op::Neg);
                    d
                }
                Expr::Pow(a, n) => {
                    let d = emit(a, ops, cur, max);
                    ops.push(Op::Powi(*n as i32));
                    d
                }
                Expr::Call(f, a) => {
                    let d = emit(a, ops, cur, max);
                    ops.push(match f {
                        Func::Sin => Op::Sin,
                        Func::Cos => Op::Cos,
                        Func::Exp => Op::Exp,
                    });
                    d
                }
                Expr::Add(a, b) | Expr::Sub(a, b) | Expr::Mul(a, b) | Expr::Div(a, b) => {
                    let d = emit(a, ops, cur, max);
                    emit(b, ops, d, max);
                    ops.push(match e {
                        Expr::Add(..) => Op::Add,
                        Expr::Sub(..) => Op::Sub,
                        Expr::Mul(..) => Op::Mul,
                        _ => Op::Div,
                    });
                    d
                }
            }
        }
        // fold constant subtrees first so literal-heavy expressions stay short
        let folded = fold(e);
        let mut ops = Vec::new();
        let mut depth = 0;
        emit(&folded, &mut ops, 0, &mut depth);
        Compiled { ops, depth }
    }

    #[inline]
    pub fn eval(&self, x: &[f64; 4]) -> f64 {
        if self.depth <= STACK {
            let mut st = [0.0f64; STACK];
            self.run(x, &mut st)
        } else {
            let mut st = vec![0.0f64; self.depth];
            self.run(x, &mut st)
        }
    }

    #[inline]
    fn run(&self, x: &[f64; 4], st: &mut [f64]) -> f64 {
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Const(c) => {
                    st[sp] = c;
                    sp += 1;
                }
                Op::Load(i) => {
                    st[sp] = x[i as usize];
                    sp += 1;
                }
                Op::Neg => st[sp - 1] = -st[sp - 1],
                Op::Powi(n) => st[sp - 1] = st[sp - 1].powi(n),
                Op::Sin => st[sp - 1] = st[sp - 1].sin(),
                Op::Cos => st[sp - 1] = st[sp - 1].cos(),
                Op::Exp => st[sp - 1] = st[sp - 1].exp(),
                Op::Add => {
                    sp -= 1;
                    st[sp - 1] += st[sp];
                }
                Op::Sub => {
                    sp -= 1;
                    st[sp - 1] -= st[sp];
                }
                Op::Mul => {
                    sp -= 1;
                    st[sp - 1] *= st[sp];
                }
                Op::Div => {
                    sp -= 1;
                    st[sp - 1] /= st[sp];
                }
            }
        }
        st[0]
    }
}

fn fold(e: &Expr) -> Expr {
    if !e.depends_on_vars() {
        return Expr::Num(e.eval(&[0.0; 4]));
    }
    match e {
        Expr::Neg(a) => Expr::Neg(Box::new(fold(a))),
        Expr::Pow(a, n) => Expr::Pow(Box::new(fold(a)), *n),
        Expr::Call(f, a) => Expr::Call(*f, Box::new(fold(a))),
        Expr::Add(a, b) => Expr::Add(Box::new(fold(a)), Box::new(fold(b))),
        Expr::Sub(a, b) => Expr::Sub(Box::new(fold(a)), Box::new(fold(b))),
        Expr::Mul(a, b) => Expr::Mul(Box::new(fold(a)), Box::new(fold(b))),
        Expr::Div(a, b) => Expr::Div(Box::new(fold(a)), Box::new(fold(b))),
        other => other.clone(),
    }
}

/// Replaces every occurrence of `v` by `with`.
pub fn substitute(e: &Expr, v: Var, with: &Expr) -> Expr {
    let rec = |a: &Expr| Box::new(substitute(a, v, with));
    match e {
        Expr::Var(w) if *w == v => with.clone(),
        Expr::Num(_) | Expr::Pi | Expr::Var(_) => e.clone(),
        Expr::Neg(a) => Expr::Neg(rec(a)),
        Expr::Pow(a, n) => Expr::Pow(rec(a), *n),
        Expr::Call(f, a) => Expr::Call(*f, rec(a)),
        Expr::Add(a, b) => Expr::Add(rec(a), rec(b)),
        Expr::Sub(a, b) => Expr::Sub(rec(a), rec(b)),
        Expr::Mul(a, b) => Expr::Mul(rec(a), rec(b)),
        Expr::Div(a, b) => Expr::Div(rec(a), rec(b)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn at(q: f64, p: f64) -> [f64; 4] {
        [q, 0.0, p, 0.0]
    }

    #[test]
    fn pendulum_at_origin() {
        let e = parse("p^2/2 + cos(2*pi*q)", 1).unwrap();
        assert_eq!(e.eval(&at(0.0, 0.0)), 1.0);
        assert_eq!(Compiled::new(&e).eval(&at(0.0, 0.0)), 1.0);
    }

    #[test]
    fn free_particle_value() {
        let e = parse("p^2/2", 1).unwrap();
        assert_eq!(e.eval(&at(0.3, 2.0)), 2.0);
    }

    #[test]
    fn unary_plus_is_rejected_at_its_offset() {
        let err = parse("p^2/+cos(q)", 1).unwrap_err();
        assert_eq!(err.offset(), Some(4));
    }

    #[test]
    fn unknown_identifier_reports_position() {
        match parse("p^2 + x", 1) {
            Err(ParseError::UnknownIdentifier { offset, ident }) => {
                assert_eq!(offset, 6);
                assert_eq!(ident, "x");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch() {
        assert!(matches!(
            parse("p2^2", 1),
            Err(ParseError::DimensionMismatch { .. })
        ));
        assert!(matches!(
            parse("p^2", 2),
            Err(ParseError::DimensionMismatch { .. })
        ));
        assert!(parse("p1^2/2 + p2^2/2 + cos(2*pi*q1)*cos(2*pi*q2)", 2).is_ok());
    }

    #[test]
    fn variable_divisor_rejected() {
        assert!(matches!(
            parse("1/p", 1),
            Err(ParseError::NonConstantDivisor { offset: 2 })
        ));
        assert!(parse("p^2/(2*pi)", 1).is_ok());
    }

    #[test]
    fn reserialization_is_idempotent() {
        for src in [
            "p^2/2 + cos(2*pi*q)",
            "-p^2",
            "(p - 0.2*pi*cos(2*pi*q))^2/2 - 3*(q - 1)^3",
            "exp(-(q^2))*sin(p)/3 - -p",
            "0.1*2^3 - (1 - 2) - 1e-3",
        ] {
            let e = parse(src, 1).unwrap();
            let s1 = e.to_string();
            let e2 = parse(&s1, 1).unwrap();
            assert_eq!(s1, e2.to_string(), "{src}");
            let x = at(0.37, -1.3);
            assert!((e.eval(&x) - e2.eval(&x)).abs() <= 1e-14 * (1.0 + e.eval(&x).abs()));
        }
    }

    #[test]
    fn symbolic_derivative_matches_difference_quotient() {
        let e = parse("p^4/4 + p*sin(2*pi*q) + exp(cos(q))", 1).unwrap();
        let dp = Compiled::new(&e.derivative(Var::P(0)));
        let dq = Compiled::new(&e.derivative(Var::Q(0)));
        let c = Compiled::new(&e);
        let (q, p) = (0.3, 0.7);
        let h = 1e-6;
        let fd_p = (c.eval(&at(q, p + h)) - c.eval(&at(q, p - h))) / (2.0 * h);
        let fd_q = (c.eval(&at(q + h, p)) - c.eval(&at(q - h, p))) / (2.0 * h);
        assert!((dp.eval(&at(q, p)) - fd_p).abs() < 1e-8);
        assert!((dq.eval(&at(q, p)) - fd_q).abs() < 1e-8);
    }
}
