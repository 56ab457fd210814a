//! Arithmetic expressions over `x1..xn`, `u1..um`, `d1..dl`.
//!
//! Grammar (usual precedence, `^` binds tighter than unary minus and is right
//! associative):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := '-' unary | power
//! power := atom ('^' unary)?
//! atom  := number | name | name '(' expr ')' | '(' expr ')'
//! ```
//!
//! Parsed trees are compiled to a flat stack program for evaluation inside the
//! integrator loop.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    State,
    Control,
    Disturbance,
}

/// A variable reference, zero-based (`x1` is `State, 0`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    pub kind: VarKind,
    pub index: usize,
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
    Sin,
    Cos,
    Tan,
    Exp,
    Log,
    Sqrt,
    Abs,
}

impl Func {
    fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tan" => Func::Tan,
            "exp" => Func::Exp,
            "log" | "ln" => Func::Log,
            "sqrt" => Func::Sqrt,
            "abs" => Func::Abs,
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
            Func::Abs => "abs",
        }
    }

    fn apply(self, v: f64) -> f64 {
        match self {
            Func::Sin => v.sin(),
            Func::Cos => v.cos(),
            Func::Tan => v.tan(),
            Func::Exp => v.exp(),
            Func::Log => v.ln(),
            Func::Sqrt => v.sqrt(),
            Func::Abs => v.abs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Num(f64),
    Var(Var),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
    Call(Func, Box<Expr>),
}

/// Declared dimensions, used to reject out-of-range variables.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub n: usize,
    pub m: usize,
    pub l: usize,
}

impl Expr {
    pub fn parse(src: &str, dims: Dims) -> Result<Expr> {
        Self::parse_with(src, dims, &BTreeMap::new())
    }

    /// Parses with named constants substituted as literals.
    pub fn parse_with(src: &str, dims: Dims, constants: &BTreeMap<String, f64>) -> Result<Expr> {
        let tokens = lex(src)?;
        let mut p = Parser {
            src,
            tokens,
            pos: 0,
            dims,
            constants,
        };
        let e = p.expr()?;
        if let Some(t) = p.peek() {
            return Err(p.err(t.offset, format!("unexpected {}", t.kind)));
        }
        Ok(e)
    }

    pub fn eval(&self, x: &[f64], u: &[f64], d: &[f64]) -> f64 {
        match self {
            Expr::Num(v) => *v,
            Expr::Var(var) => match var.kind {
                VarKind::State => x[var.index],
                VarKind::Control => u[var.index],
                VarKind::Disturbance => d[var.index],
            },
            Expr::Neg(e) => -e.eval(x, u, d),
            Expr::Bin(op, a, b) => apply_bin(*op, a.eval(x, u, d), b.eval(x, u, d)),
            Expr::Call(f, a) => f.apply(a.eval(x, u, d)),
        }
    }

    fn has_vars(&self) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(_) => true,
            Expr::Neg(e) | Expr::Call(_, e) => e.has_vars(),
            Expr::Bin(_, a, b) => a.has_vars() || b.has_vars(),
        }
    }

    /// Compiles to a stack program with constant subtrees folded.
    pub fn compile(&self) -> Program {
        let mut ops = Vec::new();
        emit(self, &mut ops);
        let mut depth = 0usize;
        let mut max_depth = 0usize;
        for op in &ops {
            match op {
                Op::Const(_) | Op::Load(..) => depth += 1,
                Op::Bin(_) => depth -= 1,
                Op::Neg | Op::Call(_) => {}
            }
            max_depth = max_depth.max(depth);
        }
        Program { ops, max_depth }
    }
}

fn apply_bin(op: BinOp, a: f64, b: f64) -> f64 {
    match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a * b,
        BinOp::Div => a / b,
        BinOp::Pow => {
            if b == b.trunc() && b.abs() <= 16.0 {
                a.powi(b as i32)
            } else {
                a.powf(b)
            }
        }
    }
}

fn emit(e: &Expr, ops: &mut Vec<Op>) {
    if !e.has_vars() {
        ops.push(Op::Const(e.eval(&[], &[], &[])));
        return;
    }
    match e {
        Expr::Num(v) => ops.push(Op::Const(*v)),
        Expr::Var(v) => ops.push(Op::Load(v.kind, v.index)),
        Expr::Neg(a) => {
            emit(a, ops);
            ops.push(Op::Neg);
        }
        Expr::Call(f, a) => {
            emit(a, ops);
            ops.push(Op::Call(*f));
        }
        Expr::Bin(op, a, b) => {
            emit(a, ops);
            emit(b, ops);
            ops.push(Op::Bin(*op));
        }
    }
}

impl fmt::Display for Expr {
    /// Fully parenthesized form; parsing it back yields an identical tree.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) if *v < 0.0 || (*v == 0.0 && v.is_sign_negative()) => {
                write!(f, "(-{})", -v)
            }
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(v) => {
                let c = match v.kind {
                    VarKind::State => 'x',
                    VarKind::Control => 'u',
                    VarKind::Disturbance => 'd',
                };
                write!(f, "{c}{}", v.index + 1)
            }
            Expr::Neg(e) => write!(f, "(-{e})"),
            Expr::Bin(op, a, b) => {
                let s = match op {
                    BinOp::Add => "+",
                    BinOp::Sub => "-",
                    BinOp::Mul => "*",
                    BinOp::Div => "/",
                    BinOp::Pow => "^",
                };
                write!(f, "({a} {s} {b})")
            }
            Expr::Call(func, a) => write!(f, "{}({a})", func.name()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Op {
    Const(f64),
    Load(VarKind, usize),
    Neg,
    Bin(BinOp),
    Call(Func),
}

/// Flat postfix program compiled from an [`Expr`].
#[derive(Debug, Clone, PartialEq)]
pub struct Program {
    ops: Vec<Op>,
    max_depth: usize,
}

const INLINE_STACK: usize = 32;

impl Program {
    pub fn eval(&self, x: &[f64], u: &[f64], d: &[f64]) -> f64 {
        if self.max_depth <= INLINE_STACK {
            let mut stack = [0.0f64; INLINE_STACK];
            self.run(&mut stack, x, u, d)
        } else {
            let mut stack = vec![0.0f64; self.max_depth];
            self.run(&mut stack, x, u, d)
        }
    }

    #[inline]
    fn run(&self, stack: &mut [f64], x: &[f64], u: &[f64], d: &[f64]) -> f64 {
        let mut sp = 0usize;
        for op in &self.ops {
            match *op {
                Op::Const(v) => {
                    stack[sp] = v;
                    sp += 1;
                }
                Op::Load(kind, i) => {
                    stack[sp] = match kind {
                        VarKind::State => x[i],
                        VarKind::Control => u[i],
                        VarKind::Disturbance => d[i],
                    };
                    sp += 1;
                }
                Op::Neg => stack[sp - 1] = -stack[sp - 1],
                Op::Call(f) => stack[sp - 1] = f.apply(stack[sp - 1]),
                Op::Bin(op) => {
                    sp -= 1;
                    stack[sp - 1] = apply_bin(op, stack[sp - 1], stack[sp]);
                }
            }
        }
        stack[0]
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Sym(char),
}

impl fmt::Display for TokKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokKind::Num(v) => write!(f, "number {v}"),
            TokKind::Ident(s) => write!(f, "name `{s}`"),
            TokKind::Sym(c) => write!(f, "`{c}`"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    offset: usize,
}

fn lex(src: &str) -> Result<Vec<Token>> {
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
            let v: f64 = text.parse().map_err(|_| Error::Syntax {
                expr: src.to_string(),
                offset: start,
                message: format!("malformed number `{text}`"),
            })?;
            out.push(Token {
                kind: TokKind::Num(v),
                offset: start,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: TokKind::Ident(src[start..i].to_string()),
                offset: start,
            });
        } else if "+-*/^()".contains(c) {
            out.push(Token {
                kind: TokKind::Sym(c),
                offset: i,
            });
            i += 1;
        } else {
            return Err(Error::Syntax {
                expr: src.to_string(),
                offset: i,
                message: format!("unexpected character `{c}`"),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    src: &'a str,
    tokens: Vec<Token>,
    pos: usize,
    dims: Dims,
    constants: &'a BTreeMap<String, f64>,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.pos)
    }

    fn peek_sym(&self, c: char) -> bool {
        matches!(self.peek(), Some(Token { kind: TokKind::Sym(s), .. }) if *s == c)
    }

    fn err(&self, offset: usize, message: String) -> Error {
        Error::Syntax {
            expr: self.src.to_string(),
            offset,
            message,
        }
    }

    fn expect_sym(&mut self, c: char) -> Result<()> {
        if self.peek_sym(c) {
            self.pos += 1;
            Ok(())
        } else {
            let offset = self.peek().map_or(self.src.len(), |t| t.offset);
            Err(self.err(offset, format!("expected `{c}`")))
        }
    }

    fn expr(&mut self) -> Result<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = if self.peek_sym('+') {
                BinOp::Add
            } else if self.peek_sym('-') {
                BinOp::Sub
            } else {
                return Ok(lhs);
            };
            self.pos += 1;
            let rhs = self.term()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn term(&mut self) -> Result<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = if self.peek_sym('*') {
                BinOp::Mul
            } else if self.peek_sym('/') {
                BinOp::Div
            } else {
                return Ok(lhs);
            };
            self.pos += 1;
            let rhs = self.unary()?;
            lhs = Expr::Bin(op, Box::new(lhs), Box::new(rhs));
        }
    }

    fn unary(&mut self) -> Result<Expr> {
        if self.peek_sym('-') {
            self.pos += 1;
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Num(v) => Expr::Num(-v),
                other => Expr::Neg(Box::new(other)),
            });
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr> {
        let base = self.atom()?;
        if self.peek_sym('^') {
            self.pos += 1;
            let exp = self.unary()?;
            return Ok(Expr::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.err(self.src.len(), "unexpected end of expression".into()));
        };
        self.pos += 1;
        match tok.kind {
            TokKind::Num(v) => Ok(Expr::Num(v)),
            TokKind::Sym('(') => {
                let e = self.expr()?;
                self.expect_sym(')')?;
                Ok(e)
            }
            TokKind::Sym(c) => Err(self.err(tok.offset, format!("unexpected `{c}`"))),
            TokKind::Ident(name) => {
                if self.peek_sym('(') {
                    let func = Func::from_name(&name).ok_or_else(|| {
                        self.err(tok.offset, format!("unknown function `{name}`"))
                    })?;
                    self.pos += 1;
                    let arg = self.expr()?;
                    self.expect_sym(')')?;
                    return Ok(Expr::Call(func, Box::new(arg)));
                }
                self.name(&name)
            }
        }
    }

    fn name(&self, name: &str) -> Result<Expr> {
        if let Some(v) = self.constants.get(name) {
            return Ok(Expr::Num(*v));
        }
        if name == "pi" {
            return Ok(Expr::Num(std::f64::consts::PI));
        }
        let unknown = || Error::UnknownVariable {
            name: name.to_string(),
            expr: self.src.to_string(),
        };
        let (kind, limit) = match name.as_bytes()[0] {
            b'x' => (VarKind::State, self.dims.n),
            b'u' => (VarKind::Control, self.dims.m),
            b'd' => (VarKind::Disturbance, self.dims.l),
            _ => return Err(unknown()),
        };
        let idx: usize = name[1..].parse().map_err(|_| unknown())?;
        if idx == 0 || idx > limit {
            return Err(unknown());
        }
        Ok(Expr::Var(Var {
            kind,
            index: idx - 1,
        }))
    }
}
