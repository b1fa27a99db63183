//! Formula expressions over time `t` and random coordinates `w1..w9`.
//!
//! Grammar (infix, usual precedence, `^` right-associative):
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := unary (('*' | '/') unary)*
//! unary  := '-' unary | power
//! power  := atom ('^' unary)?          exponent must fold to an integer constant
//! atom   := number | 'pi' | 't' | 'w1'..'w9' | name '(' expr ')' | '(' expr ')'
//! name   := sin | cos | exp | log | sqrt | neg | expinv | expinv1 | expinv2 | ...
//! ```
//!
//! `expinvK(u)` is `exp(-1/u) / u^K` for `u > 0` and exactly `0` otherwise. It
//! is closed under differentiation and lets smooth cutoff functions live inside
//! the expression language.

use std::fmt;
use std::ops::{Add, Div, Mul, Neg, Sub};

use thiserror::Error;

/// Largest supported Ω dimension in formulas (`w1`..`w9`).
pub const MAX_OMEGA_DIM: usize = 9;

/// Arguments below this are treated as the `u <= 0` branch of `expinv`.
pub const EXPINV_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    T,
    /// 1-based Ω coordinate.
    W(usize),
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::T => write!(f, "t"),
            Var::W(i) => write!(f, "w{i}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Sin,
    Cos,
    Exp,
    Log,
    Sqrt,
    Neg,
    /// `exp(-1/u) / u^k`, zero for `u <= 0`.
    ExpInv(u32),
}

impl Func {
    fn name(&self) -> String {
        match self {
            Func::Sin => "sin".into(),
            Func::Cos => "cos".into(),
            Func::Exp => "exp".into(),
            Func::Log => "log".into(),
            Func::Sqrt => "sqrt".into(),
            Func::Neg => "neg".into(),
            Func::ExpInv(0) => "expinv".into(),
            Func::ExpInv(k) => format!("expinv{k}"),
        }
    }

    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "exp" => Func::Exp,
            "log" => Func::Log,
            "sqrt" => Func::Sqrt,
            "neg" => Func::Neg,
            "expinv" => Func::ExpInv(0),
            _ => {
                let k = name.strip_prefix("expinv")?.parse::<u32>().ok()?;
                Func::ExpInv(k)
            }
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

/// Immutable expression tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(Var),
    Unary(Func, Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("syntax error at {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown identifier `{name}` at {pos}")]
    UnknownIdentifier { pos: usize, name: String },
    #[error("variable w{index} at {pos} exceeds omega dimension {omega_dim}")]
    VariableOutOfRange {
        pos: usize,
        index: usize,
        omega_dim: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("log of non-positive argument {0}")]
    LogDomain(f64),
    #[error("sqrt of negative argument {0}")]
    SqrtDomain(f64),
    #[error("division by zero")]
    DivisionByZero,
    #[error("non-finite result")]
    NonFinite,
    #[error("variable w{0} not supplied")]
    MissingVariable(usize),
}

impl Expr {
    pub fn constant(c: f64) -> Expr {
        Expr::Const(c)
    }

    pub fn t() -> Expr {
        Expr::Var(Var::T)
    }

    pub fn w(index: usize) -> Expr {
        Expr::Var(Var::W(index))
    }

    pub fn apply(func: Func, arg: Expr) -> Expr {
        Expr::Unary(func, Box::new(arg))
    }

    pub fn powi(self, n: i32) -> Expr {
        Expr::Pow(Box::new(self), n)
    }

    /// Parses `source`, rejecting `wK` with `K > omega_dim`.
    pub fn parse(source: &str, omega_dim: usize) -> Result<Expr, ParseError> {
        let tokens = tokenize(source)?;
        let mut parser = Parser {
            tokens,
            pos: 0,
            omega_dim,
            end: source.len(),
        };
        let expr = parser.expr()?;
        if let Some(tok) = parser.peek() {
            return Err(ParseError::Syntax {
                pos: tok.pos,
                msg: format!("unexpected {:?}", tok.kind),
            });
        }
        Ok(expr.simplify())
    }

    /// Evaluates at time `t` and Ω point `w` (`w[0]` is `w1`).
    pub fn eval(&self, t: f64, w: &[f64]) -> Result<f64, EvalError> {
        let v = self.eval_raw(t, w)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(EvalError::NonFinite)
        }
    }

    fn eval_raw(&self, t: f64, w: &[f64]) -> Result<f64, EvalError> {
        Ok(match self {
            Expr::Const(c) => *c,
            Expr::Var(Var::T) => t,
            Expr::Var(Var::W(i)) => *w.get(i - 1).ok_or(EvalError::MissingVariable(*i))?,
            Expr::Unary(func, arg) => {
                let x = arg.eval_raw(t, w)?;
                match func {
                    Func::Sin => x.sin(),
                    Func::Cos => x.cos(),
                    Func::Exp => x.exp(),
                    Func::Log => {
                        if x <= 0.0 {
                            return Err(EvalError::LogDomain(x));
                        }
                        x.ln()
                    }
                    Func::Sqrt => {
                        if x < 0.0 {
                            return Err(EvalError::SqrtDomain(x));
                        }
                        x.sqrt()
                    }
                    Func::Neg => -x,
                    Func::ExpInv(k) => expinv(x, *k),
                }
            }
            Expr::Binary(op, l, r) => {
                let a = l.eval_raw(t, w)?;
                let b = r.eval_raw(t, w)?;
                match op {
                    BinOp::Add => a + b,
                    BinOp::Sub => a - b,
                    BinOp::Mul => a * b,
                    BinOp::Div => {
                        if b == 0.0 {
                            return Err(EvalError::DivisionByZero);
                        }
                        a / b
                    }
                }
            }
            Expr::Pow(base, n) => {
                let x = base.eval_raw(t, w)?;
                if *n < 0 && x == 0.0 {
                    return Err(EvalError::DivisionByZero);
                }
                x.powi(*n)
            }
        })
    }

    /// First derivative with respect to `var`, lightly simplified.
    pub fn diff(&self, var: Var) -> Expr {
        self.diff_raw(var).simplify()
    }

    /// Derivative of the given order (`order == 0` returns a clone).
    pub fn diff_n(&self, var: Var, order: usize) -> Expr {
        let mut e = self.clone();
        for _ in 0..order {
            e = e.diff(var);
        }
        e
    }

    fn diff_raw(&self, var: Var) -> Expr {
        match self {
            Expr::Const(_) => Expr::Const(0.0),
            Expr::Var(v) => Expr::Const(if *v == var { 1.0 } else { 0.0 }),
            Expr::Binary(op, l, r) => {
                let dl = l.diff_raw(var);
                let dr = r.diff_raw(var);
                let (l, r) = ((**l).clone(), (**r).clone());
                match op {
                    BinOp::Add => dl + dr,
                    BinOp::Sub => dl - dr,
                    BinOp::Mul => dl * r + l * dr,
                    BinOp::Div => dl / r.clone() - l * dr / r.powi(2),
                }
            }
            Expr::Pow(base, n) => {
                let db = base.diff_raw(var);
                Expr::Const(*n as f64) * (**base).clone().powi(n - 1) * db
            }
            Expr::Unary(func, arg) => {
                let da = arg.diff_raw(var);
                let u = (**arg).clone();
                let outer = match func {
                    Func::Sin => Expr::apply(Func::Cos, u),
                    Func::Cos => -Expr::apply(Func::Sin, u),
                    Func::Exp => Expr::apply(Func::Exp, u),
                    Func::Log => return da / u,
                    Func::Sqrt => return da / (Expr::Const(2.0) * Expr::apply(Func::Sqrt, u)),
                    Func::Neg => return -da,
                    Func::ExpInv(k) => {
                        let lead = Expr::apply(Func::ExpInv(k + 2), u.clone());
                        if *k == 0 {
                            lead
                        } else {
                            lead - Expr::Const(*k as f64) * Expr::apply(Func::ExpInv(k + 1), u)
                        }
                    }
                };
                outer * da
            }
        }
    }

    /// Constant folding plus the `x*0`, `x*1`, `x+0`, `x/1` identities.
    pub fn simplify(&self) -> Expr {
        match self {
            Expr::Const(_) | Expr::Var(_) => self.clone(),
            Expr::Unary(func, arg) => {
                let a = arg.simplify();
                if let Expr::Const(c) = a {
                    if let Ok(v) = Expr::Unary(*func, Box::new(Expr::Const(c))).eval(0.0, &[]) {
                        return Expr::Const(v);
                    }
                }
                match (func, a) {
                    (Func::Neg, Expr::Unary(Func::Neg, inner)) => *inner,
                    (f, a) => Expr::Unary(*f, Box::new(a)),
                }
            }
            Expr::Pow(base, n) => {
                let b = base.simplify();
                match (b, *n) {
                    (_, 0) => Expr::Const(1.0),
                    (b, 1) => b,
                    (Expr::Const(c), n) if c != 0.0 || n > 0 => Expr::Const(c.powi(n)),
                    (Expr::Pow(inner, m), n) => match m.checked_mul(n) {
                        Some(mn) => Expr::Pow(inner, mn),
                        None => Expr::Pow(Box::new(Expr::Pow(inner, m)), n),
                    },
                    (b, n) => Expr::Pow(Box::new(b), n),
                }
            }
            Expr::Binary(op, l, r) => {
                let l = l.simplify();
                let r = r.simplify();
                use Expr::Const as C;
                match (op, &l, &r) {
                    (BinOp::Add, C(a), C(b)) => C(a + b),
                    (BinOp::Sub, C(a), C(b)) => C(a - b),
                    (BinOp::Mul, C(a), C(b)) => C(a * b),
                    (BinOp::Div, C(a), C(b)) if *b != 0.0 => C(a / b),
                    (BinOp::Add, C(z), _) if *z == 0.0 => r,
                    (BinOp::Add | BinOp::Sub, _, C(z)) if *z == 0.0 => l,
                    (BinOp::Sub, C(z), _) if *z == 0.0 => Expr::Unary(Func::Neg, Box::new(r)),
                    (BinOp::Mul, C(z), _) | (BinOp::Mul, _, C(z)) if *z == 0.0 => C(0.0),
                    (BinOp::Mul, C(one), _) if *one == 1.0 => r,
                    (BinOp::Mul | BinOp::Div, _, C(one)) if *one == 1.0 => l,
                    (BinOp::Div, C(z), _) if *z == 0.0 => C(0.0),
                    (BinOp::Mul, C(m), _) if *m == -1.0 => Expr::Unary(Func::Neg, Box::new(r)),
                    _ => Expr::Binary(*op, Box::new(l), Box::new(r)),
                }
            }
        }
    }

    /// Largest `wK` index referenced, 0 when none.
    pub fn max_omega_index(&self) -> usize {
        match self {
            Expr::Const(_) | Expr::Var(Var::T) => 0,
            Expr::Var(Var::W(i)) => *i,
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.max_omega_index(),
            Expr::Binary(_, l, r) => l.max_omega_index().max(r.max_omega_index()),
        }
    }

    pub fn depends_on(&self, var: Var) -> bool {
        match self {
            Expr::Const(_) => false,
            Expr::Var(v) => *v == var,
            Expr::Unary(_, a) | Expr::Pow(a, _) => a.depends_on(var),
            Expr::Binary(_, l, r) => l.depends_on(var) || r.depends_on(var),
        }
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Expr::Const(c) => Some(*c),
            _ => None,
        }
    }

    fn precedence(&self) -> u8 {
        match self {
            Expr::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
            Expr::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
            Expr::Const(c) if *c < 0.0 => 2,
            Expr::Pow(..) => 4,
            _ => 5,
        }
    }
}

/// `exp(-1/u) / u^k` for `u > EXPINV_GUARD`, else 0.
pub fn expinv(u: f64, k: u32) -> f64 {
    if u < EXPINV_GUARD {
        0.0
    } else {
        (-1.0 / u - k as f64 * u.ln()).exp()
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fn child(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
            if e.precedence() < min_prec {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        }
        match self {
            Expr::Const(c) => {
                if *c < 0.0 {
                    write!(f, "-{}", -c)
                } else {
                    write!(f, "{c}")
                }
            }
            Expr::Var(v) => write!(f, "{v}"),
            Expr::Unary(func, arg) => write!(f, "{}({arg})", func.name()),
            Expr::Pow(base, n) => {
                child(f, base, 5)?;
                if *n < 0 {
                    write!(f, "^({n})")
                } else {
                    write!(f, "^{n}")
                }
            }
            Expr::Binary(op, l, r) => {
                let (sym, prec) = match op {
                    BinOp::Add => ("+", 1),
                    BinOp::Sub => ("-", 1),
                    BinOp::Mul => ("*", 2),
                    BinOp::Div => ("/", 2),
                };
                child(f, l, prec)?;
                write!(f, " {sym} ")?;
                // left-associative: the right operand needs strictly higher precedence
                child(f, r, prec + 1)
            }
        }
    }
}

impl Add for Expr {
    type Output = Expr;
    fn add(self, rhs: Expr) -> Expr {
        Expr::Binary(BinOp::Add, Box::new(self), Box::new(rhs))
    }
}

impl Sub for Expr {
    type Output = Expr;
    fn sub(self, rhs: Expr) -> Expr {
        Expr::Binary(BinOp::Sub, Box::new(self), Box::new(rhs))
    }
}

impl Mul for Expr {
    type Output = Expr;
    fn mul(self, rhs: Expr) -> Expr {
        Expr::Binary(BinOp::Mul, Box::new(self), Box::new(rhs))
    }
}

impl Div for Expr {
    type Output = Expr;
    fn div(self, rhs: Expr) -> Expr {
        Expr::Binary(BinOp::Div, Box::new(self), Box::new(rhs))
    }
}

impl Neg for Expr {
    type Output = Expr;
    fn neg(self) -> Expr {
        Expr::Unary(Func::Neg, Box::new(self))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokenKind {
    Num(f64),
    Ident(String),
    Op(char),
    LParen,
    RParen,
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokenKind,
    pos: usize,
}

fn tokenize(src: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_digit() || bytes[i] == b'.') {
                i += 1;
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let v = text.parse::<f64>().map_err(|_| ParseError::Syntax {
                pos: start,
                msg: format!("bad number `{text}`"),
            })?;
            out.push(Token {
                kind: TokenKind::Num(v),
                pos: start,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: TokenKind::Ident(src[start..i].to_string()),
                pos: start,
            });
        } else {
            let kind = match c {
                '+' | '-' | '*' | '/' | '^' => TokenKind::Op(c),
                '(' => TokenKind::LParen,
                ')' => TokenKind::RParen,
                _ => {
                    return Err(ParseError::Syntax {
                        pos: i,
                        msg: format!("unexpected character `{c}`"),
                    })
                }
            };
            out.push(Token { kind, pos: i });
            i += 1;
        }
    }
    Ok(out)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    omega_dim: usize,
    end: usize,
}

impl Parser {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn here(&self) -> usize {
        self.peek().map_or(self.end, |t| t.pos)
    }

    fn eat_op(&mut self, ops: &[char]) -> Option<char> {
        match self.peek() {
            Some(Token {
                kind: TokenKind::Op(c),
                ..
            }) if ops.contains(c) => {
                let c = *c;
                self.pos += 1;
                Some(c)
            }
            _ => None,
        }
    }

    fn expect(&mut self, kind: TokenKind, what: &str) -> Result<(), ParseError> {
        match self.peek() {
            Some(tok) if tok.kind == kind => {
                self.pos += 1;
                Ok(())
            }
            _ => Err(ParseError::Syntax {
                pos: self.here(),
                msg: format!("expected {what}"),
            }),
        }
    }

    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        while let Some(op) = self.eat_op(&['+', '-']) {
            let rhs = self.term()?;
            lhs = if op == '+' { lhs + rhs } else { lhs - rhs };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.eat_op(&['*', '/']) {
            let rhs = self.unary()?;
            lhs = if op == '*' { lhs * rhs } else { lhs / rhs };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.eat_op(&['-']).is_some() {
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                e => -e,
            });
        }
        if self.eat_op(&['+']).is_some() {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        if self.eat_op(&['^']).is_none() {
            return Ok(base);
        }
        let pos = self.here();
        let exponent = self.unary()?.simplify();
        match exponent {
            Expr::Const(c) if c.fract() == 0.0 && c.abs() <= i32::MAX as f64 => {
                Ok(base.powi(c as i32))
            }
            _ => Err(ParseError::Syntax {
                pos,
                msg: "exponent must be a constant integer".into(),
            }),
        }
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(ParseError::Syntax {
                pos: self.end,
                msg: "unexpected end of input".into(),
            });
        };
        self.pos += 1;
        match tok.kind {
            TokenKind::Num(v) => Ok(Expr::Const(v)),
            TokenKind::LParen => {
                let e = self.expr()?;
                self.expect(TokenKind::RParen, "`)`")?;
                Ok(e)
            }
            TokenKind::Ident(name) => {
                if matches!(self.peek(), Some(Token { kind: TokenKind::LParen, .. })) {
                    let func = Func::from_name(&name).ok_or(ParseError::UnknownIdentifier {
                        pos: tok.pos,
                        name: name.clone(),
                    })?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect(TokenKind::RParen, "`)`")?;
                    return Ok(Expr::apply(func, arg));
                }
                self.variable(&name, tok.pos)
            }
            other => Err(ParseError::Syntax {
                pos: tok.pos,
                msg: format!("unexpected {other:?}"),
            }),
        }
    }

    fn variable(&self, name: &str, pos: usize) -> Result<Expr, ParseError> {
        match name {
            "t" => Ok(Expr::t()),
            "pi" => Ok(Expr::Const(std::f64::consts::PI)),
            _ => {
                let index = name
                    .strip_prefix('w')
                    .filter(|d| d.len() == 1)
                    .and_then(|d| d.parse::<usize>().ok())
                    .filter(|i| (1..=MAX_OMEGA_DIM).contains(i))
                    .ok_or_else(|| ParseError::UnknownIdentifier {
                        pos,
                        name: name.to_string(),
                    })?;
                if index > self.omega_dim {
                    return Err(ParseError::VariableOutOfRange {
                        pos,
                        index,
                        omega_dim: self.omega_dim,
                    });
                }
                Ok(Expr::w(index))
            }
        }
    }
}

/// A process `ξ(t, ω) = g(t, ω)` to be examined on `[a, b]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProcessSpec {
    pub expr: Expr,
    pub source: String,
    pub interval: (f64, f64),
    pub omega_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProcessError {
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("interval needs finite a < b, got [{0}, {1}]")]
    Interval(f64, f64),
    #[error("omega dimension {0} exceeds {MAX_OMEGA_DIM}")]
    OmegaDim(usize),
    #[error("process takes negative value {value} at t = {t}, w = {w:?}")]
    Negative { t: f64, w: Vec<f64>, value: f64 },
    #[error("process cannot be evaluated at t = {t}, w = {w:?}: {source}")]
    Eval {
        t: f64,
        w: Vec<f64>,
        source: EvalError,
    },
}

impl ProcessSpec {
    pub fn new(source: &str, interval: (f64, f64), omega_dim: usize) -> Result<Self, ProcessError> {
        if omega_dim > MAX_OMEGA_DIM {
            return Err(ProcessError::OmegaDim(omega_dim));
        }
        let (a, b) = interval;
        if !(a.is_finite() && b.is_finite() && a < b) {
            return Err(ProcessError::Interval(a, b));
        }
        Ok(ProcessSpec {
            expr: Expr::parse(source, omega_dim)?,
            source: source.to_string(),
            interval,
            omega_dim,
        })
    }

    /// Checks `ξ >= 0` on a `samples`-point time grid over `[lo, hi]` at each
    /// supplied ω.
    pub fn check_nonnegative(
        &self,
        (lo, hi): (f64, f64),
        omega_points: &[Vec<f64>],
        samples: usize,
    ) -> Result<(), ProcessError> {
        for w in omega_points {
            for i in 0..=samples {
                let t = lo + (hi - lo) * i as f64 / samples as f64;
                let value = self.expr.eval(t, w).map_err(|source| ProcessError::Eval {
                    t,
                    w: w.clone(),
                    source,
                })?;
                if value < 0.0 {
                    return Err(ProcessError::Negative {
                        t,
                        w: w.clone(),
                        value,
                    });
                }
            }
        }
        Ok(())
    }

    /// The same process shifted by a constant.
    pub fn shifted(&self, c: f64) -> ProcessSpec {
        let source = format!("({}) + {c}", self.source);
        ProcessSpec {
            expr: (self.expr.clone() + Expr::Const(c)).simplify(),
            source,
            ..self.clone()
        }
    }

    /// The same process scaled by a constant.
    pub fn scaled(&self, s: f64) -> ProcessSpec {
        let source = format!("{s} * ({})", self.source);
        ProcessSpec {
            expr: (Expr::Const(s) * self.expr.clone()).simplify(),
            source,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn p(s: &str, n: usize) -> Expr {
        Expr::parse(s, n).unwrap()
    }

    /// Fourth-order central difference in `t`.
    fn fd_t(e: &Expr, t: f64, w: &[f64], h: f64) -> f64 {
        let f = |x: f64| e.eval(x, w).unwrap();
        (-f(t + 2.0 * h) + 8.0 * f(t + h) - 8.0 * f(t - h) + f(t - 2.0 * h)) / (12.0 * h)
    }

    #[test]
    fn parse_examples() {
        let sq = p("t^2", 0);
        assert_eq!(sq, Expr::t().powi(2));
        assert_eq!(sq.eval(3.0, &[]).unwrap(), 9.0);
        assert_eq!(
            p("1 + (t-0.5)^2 + (w1-0.4)^2", 1).eval(0.5, &[0.4]).unwrap(),
            1.0
        );
        assert!((p("sin(2*pi*t)", 0).eval(0.25, &[]).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(p("2^3^2", 0).eval(0.0, &[]).unwrap(), 512.0);
        assert_eq!(p("-t^2", 0).eval(3.0, &[]).unwrap(), -9.0);
        assert_eq!(p("1 - 2 - 3", 0).eval(0.0, &[]).unwrap(), -4.0);
        assert_eq!(p("8 / 4 / 2", 0).eval(0.0, &[]).unwrap(), 1.0);
        assert_eq!(p("2 + 3 * t", 0).eval(2.0, &[]).unwrap(), 8.0);
        assert_eq!(p("t^-1", 0).eval(4.0, &[]).unwrap(), 0.25);
        assert_eq!(p("1.5e1 + 2E-1", 0).eval(0.0, &[]).unwrap(), 15.2);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            Expr::parse("t +", 0),
            Err(ParseError::Syntax { pos: 3, .. })
        ));
        assert!(matches!(
            Expr::parse("foo(t)", 0),
            Err(ParseError::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            Expr::parse("x + 1", 0),
            Err(ParseError::UnknownIdentifier { .. })
        ));
        assert!(matches!(
            Expr::parse("w2 * t", 1),
            Err(ParseError::VariableOutOfRange { index: 2, .. })
        ));
        assert!(matches!(
            Expr::parse("t^t", 0),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            Expr::parse("t^0.5", 0),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            Expr::parse("(t", 0),
            Err(ParseError::Syntax { .. })
        ));
        assert!(matches!(
            Expr::parse("t $ 2", 0),
            Err(ParseError::Syntax { pos: 2, .. })
        ));
    }

    #[test]
    fn eval_examples() {
        assert_eq!(p("exp(t)", 0).eval(0.0, &[]).unwrap(), 1.0);
        assert_eq!(
            p("1/t", 0).eval(0.0, &[]),
            Err(EvalError::DivisionByZero)
        );
        assert_eq!(p("t*w1", 1).eval(2.0, &[3.0]).unwrap(), 6.0);
        assert!(matches!(
            p("log(t)", 0).eval(-1.0, &[]),
            Err(EvalError::LogDomain(_))
        ));
        assert!(matches!(
            p("sqrt(t)", 0).eval(-1.0, &[]),
            Err(EvalError::SqrtDomain(_))
        ));
        assert_eq!(p("exp(t)", 0).eval(1e4, &[]), Err(EvalError::NonFinite));
        assert_eq!(
            p("t*w1", 1).eval(1.0, &[]),
            Err(EvalError::MissingVariable(1))
        );
    }

    #[test]
    fn diff_examples() {
        assert_eq!(p("t^2", 0).diff(Var::T).eval(3.0, &[]).unwrap(), 6.0);
        let d2 = p("sin(2*pi*t)", 0).diff_n(Var::T, 2);
        assert!(d2.eval(0.0, &[]).unwrap().abs() < 1e-12);
        let d3 = p("(t-0.5)^3", 0).diff_n(Var::T, 3);
        for t in [-1.0, 0.0, 0.3, 2.0] {
            assert!((d3.eval(t, &[]).unwrap() - 6.0).abs() < 1e-12);
        }
        assert_eq!(d3, Expr::Const(6.0));
    }

    #[test]
    fn diff_domain_error_is_deferred() {
        let d = p("sqrt(t)", 0).diff(Var::T);
        assert!(d.eval(-1.0, &[]).is_err());
        assert!((d.eval(4.0, &[]).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn partial_derivatives_in_omega() {
        let e = p("t*w1^2 + sin(w2)", 2);
        let dw1 = e.diff(Var::W(1));
        assert_eq!(dw1.eval(2.0, &[3.0, 0.0]).unwrap(), 12.0);
        let dw2 = e.diff(Var::W(2));
        assert!((dw2.eval(0.0, &[0.0, 0.5]).unwrap() - 0.5f64.cos()).abs() < 1e-15);
        assert_eq!(e.diff(Var::T).diff(Var::W(1)).eval(0.0, &[1.5, 0.0]).unwrap(), 3.0);
    }

    #[test]
    fn expinv_family() {
        let e = p("expinv(t)", 0);
        assert_eq!(e.eval(-0.5, &[]).unwrap(), 0.0);
        assert_eq!(e.eval(0.0, &[]).unwrap(), 0.0);
        assert!((e.eval(0.5, &[]).unwrap() - (-2.0f64).exp()).abs() < 1e-16);
        // derivatives stay finite across the junction
        let d3 = e.diff_n(Var::T, 3);
        assert_eq!(d3.eval(0.0, &[]).unwrap(), 0.0);
        assert!(d3.eval(1e-3, &[]).unwrap().abs() < 1e-300);
        for t in [0.2, 0.7, 1.5] {
            let fd = fd_t(&e.diff_n(Var::T, 2), t, &[], 1e-4);
            let sym = d3.eval(t, &[]).unwrap();
            assert!((fd - sym).abs() <= 1e-6 * (1.0 + sym.abs()), "{t}: {fd} vs {sym}");
        }
        assert_eq!(p("expinv3(t)", 0).to_string(), "expinv3(t)");
    }

    #[test]
    fn simplification_rules() {
        assert_eq!(p("0*t + 1*t + 0", 0), Expr::t());
        assert_eq!(p("t/1 - 0", 0), Expr::t());
        assert_eq!(p("2*3 + 1", 0), Expr::Const(7.0));
        assert_eq!(p("(t^2)^3", 0), Expr::t().powi(6));
        assert_eq!(p("t^0", 0), Expr::Const(1.0));
        // a fold that would raise stays symbolic
        assert!(p("log(0 - 1)", 0).eval(0.0, &[]).is_err());
    }

    #[test]
    fn printing_is_reparseable() {
        for s in [
            "1 - (t - 2)",
            "t / (w1 * 2)",
            "-t^2",
            "(-2)^3",
            "2^-1",
            "exp(-1/t)",
            "(t+1)^-2",
            "1 - -t",
        ] {
            let e = p(s, 1);
            let back = Expr::parse(&e.to_string(), 1).unwrap();
            for &(t, w) in &[(0.7, 0.3), (1.3, -0.4)] {
                assert_eq!(e.eval(t, &[w]), back.eval(t, &[w]), "{s} -> {e}");
            }
        }
    }

    const BUNDLED: &[&str] = &[
        "t^2",
        "t",
        "0.5 + (t-0.5)^3",
        "0.5 + 0.25*sin(2*pi*t)",
        "1 + (t-0.5)^2",
        "1 + (t-0.5)^2 + (w1-0.4)^2",
        "2 + (t-0.5)^2 - (w1-0.5)^2",
        "t + 0.2*sin(t)",
        "exp(-t^2) * cos(3*w1) + sqrt(1 + w2^2) / (2 + t^2)",
        "log(2 + sin(t*w1)) * expinv(t + 2)",
    ];

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn symbolic_matches_finite_differences(
            idx in 0..BUNDLED.len(),
            t in -1.0f64..1.0,
            w1 in -1.0f64..1.0,
            w2 in -1.0f64..1.0,
        ) {
            let e = p(BUNDLED[idx], 2);
            let w = [w1, w2];
            for order in 1..=2usize {
                let base = e.diff_n(Var::T, order - 1);
                let sym = e.diff_n(Var::T, order).eval(t, &w).unwrap();
                let fd = fd_t(&base, t, &w, 1e-3);
                prop_assert!((sym - fd).abs() <= 1e-6 * sym.abs().max(1.0),
                    "{} order {}: {} vs {}", BUNDLED[idx], order, sym, fd);
            }
            let f = |x: f64| e.eval(t, &[x, w2]).unwrap();
            let h = 1e-3;
            let fd = (-f(w1 + 2.0 * h) + 8.0 * f(w1 + h) - 8.0 * f(w1 - h) + f(w1 - 2.0 * h)) / (12.0 * h);
            let sym = e.diff(Var::W(1)).eval(t, &w).unwrap();
            prop_assert!((sym - fd).abs() <= 1e-6 * sym.abs().max(1.0));
        }

        #[test]
        fn print_parse_round_trip(
            idx in 0..BUNDLED.len(),
            t in -1.0f64..1.0,
            w1 in -1.0f64..1.0,
            w2 in -1.0f64..1.0,
        ) {
            let e = p(BUNDLED[idx], 2);
            let d = e.diff(Var::T);
            for e in [e, d] {
                let back = Expr::parse(&e.to_string(), 2).unwrap();
                let (a, b) = (e.eval(t, &[w1, w2]).unwrap(), back.eval(t, &[w1, w2]).unwrap());
                prop_assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0), "{}: {} vs {}", e, a, b);
            }
        }
    }

    #[test]
    fn process_validation() {
        let p = ProcessSpec::new("1 + (t-0.5)^2 + w1", (0.0, 1.0), 1).unwrap();
        assert!(p.check_nonnegative((0.0, 1.0), &[vec![0.0], vec![1.0]], 64).is_ok());
        assert!(matches!(
            p.check_nonnegative((0.0, 1.0), &[vec![-2.0]], 64),
            Err(ProcessError::Negative { .. })
        ));
        assert!(matches!(
            ProcessSpec::new("t", (1.0, 0.0), 0),
            Err(ProcessError::Interval(..))
        ));
        assert!(matches!(
            ProcessSpec::new("w2", (0.0, 1.0), 1),
            Err(ProcessError::Parse(ParseError::VariableOutOfRange { .. }))
        ));
        let s = p.shifted(0.3);
        assert!((s.expr.eval(0.5, &[0.0]).unwrap() - 1.3).abs() < 1e-15);
        assert_eq!(
            Expr::parse(&s.source, 1).unwrap().eval(0.2, &[0.1]),
            s.expr.eval(0.2, &[0.1])
        );
    }

    #[test]
    fn pi_is_builtin() {
        assert_eq!(p("pi", 0).eval(0.0, &[]).unwrap(), PI);
    }
}
