//! Selection-function expressions.
//!
//! A small polynomial grammar in the two allelic variables `x` and `y`:
//!
//! ```text
//! expr   := term (('+' | '-') term)*
//! term   := factor (('*' | '/') factor)*
//! factor := '-' factor | atom ('^' uint)?
//! atom   := number | 'x' | 'y' | '(' expr ')'
//! ```
//!
//! Exponents must be nonnegative integer literals so that symbolic
//! differentiation stays closed-form. A chain `a^2^3` is right-associative and
//! folds to `a^8`. Numbers accept an optional fraction and decimal exponent
//! (`1.5`, `2e-3`).

use std::fmt;

use thiserror::Error;

use crate::grid::GridSpec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {message}")]
    Syntax { offset: usize, message: String },
    #[error("domain error at byte {offset}: {message}")]
    Domain { offset: usize, message: String },
    #[error("evaluation error: {0}")]
    Eval(String),
}

impl ExprError {
    pub fn kind(&self) -> &'static str {
        match self {
            ExprError::Syntax { .. } => "SyntaxError",
            ExprError::Domain { .. } => "DomainError",
            ExprError::Eval(_) => "EvalError",
        }
    }

    pub fn offset(&self) -> Option<usize> {
        match self {
            ExprError::Syntax { offset, .. } | ExprError::Domain { offset, .. } => Some(*offset),
            ExprError::Eval(_) => None,
        }
    }
}

/// Byte range in the source text that produced a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Var {
    X,
    Y,
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Var::X => f.write_str("x"),
            Var::Y => f.write_str("y"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExprKind {
    Const(f64),
    Var(Var),
    Neg(Box<Expr>),
    Binary(BinOp, Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    pub kind: ExprKind,
    pub span: Span,
}

impl Expr {
    pub fn constant(c: f64) -> Self {
        Expr { kind: ExprKind::Const(c), span: Span::default() }
    }

    pub fn var(v: Var) -> Self {
        Expr { kind: ExprKind::Var(v), span: Span::default() }
    }

    fn with_span(kind: ExprKind, span: Span) -> Self {
        Expr { kind, span }
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.kind {
            ExprKind::Const(c) => Some(c),
            _ => None,
        }
    }

    /// Structural dependence on a variable.
    pub fn contains_var(&self, v: Var) -> bool {
        match &self.kind {
            ExprKind::Const(_) => false,
            ExprKind::Var(w) => *w == v,
            ExprKind::Neg(a) | ExprKind::Pow(a, _) => a.contains_var(v),
            ExprKind::Binary(_, a, b) => a.contains_var(v) || b.contains_var(v),
        }
    }

    /// Evaluates at `(x, y)`. Division by an exact zero and non-finite
    /// results are errors.
    pub fn eval(&self, x: f64, y: f64) -> Result<f64, ExprError> {
        let v = self.eval_raw(x, y)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(ExprError::Eval(format!("non-finite result at ({x}, {y})")))
        }
    }

    fn eval_raw(&self, x: f64, y: f64) -> Result<f64, ExprError> {
        Ok(match &self.kind {
            ExprKind::Const(c) => *c,
            ExprKind::Var(Var::X) => x,
            ExprKind::Var(Var::Y) => y,
            ExprKind::Neg(a) => -a.eval_raw(x, y)?,
            ExprKind::Pow(a, k) => powi(a.eval_raw(x, y)?, *k),
            ExprKind::Binary(op, a, b) => {
                let l = a.eval_raw(x, y)?;
                let r = b.eval_raw(x, y)?;
                match op {
                    BinOp::Add => l + r,
                    BinOp::Sub => l - r,
                    BinOp::Mul => l * r,
                    BinOp::Div => {
                        if r == 0.0 {
                            return Err(ExprError::Eval(format!(
                                "division by zero at ({x}, {y})"
                            )));
                        }
                        l / r
                    }
                }
            }
        })
    }

    /// Symbolic partial derivative with constant folding.
    pub fn differentiate(&self, v: Var) -> Expr {
        let span = self.span;
        let d = match &self.kind {
            ExprKind::Const(_) => Expr::constant(0.0),
            ExprKind::Var(w) => Expr::constant(if *w == v { 1.0 } else { 0.0 }),
            ExprKind::Neg(a) => neg(a.differentiate(v)),
            ExprKind::Binary(BinOp::Add, a, b) => add(a.differentiate(v), b.differentiate(v)),
            ExprKind::Binary(BinOp::Sub, a, b) => sub(a.differentiate(v), b.differentiate(v)),
            ExprKind::Binary(BinOp::Mul, a, b) => add(
                mul(a.differentiate(v), (**b).clone()),
                mul((**a).clone(), b.differentiate(v)),
            ),
            ExprKind::Binary(BinOp::Div, a, b) => div(
                sub(
                    mul(a.differentiate(v), (**b).clone()),
                    mul((**a).clone(), b.differentiate(v)),
                ),
                pow((**b).clone(), 2),
            ),
            ExprKind::Pow(a, k) => match *k {
                0 => Expr::constant(0.0),
                k => mul(
                    mul(Expr::constant(k as f64), pow((**a).clone(), k - 1)),
                    a.differentiate(v),
                ),
            },
        };
        Expr { span, ..d }
    }
}

/// Integer power by repeated squaring; `powi` would truncate large exponents.
fn powi(mut base: f64, mut k: u32) -> f64 {
    let mut acc = 1.0;
    while k > 0 {
        if k & 1 == 1 {
            acc *= base;
        }
        base *= base;
        k >>= 1;
    }
    acc
}

fn neg(a: Expr) -> Expr {
    match a.kind {
        ExprKind::Const(c) => Expr::constant(-c),
        ExprKind::Neg(inner) => *inner,
        _ => Expr::with_span(ExprKind::Neg(Box::new(a)), Span::default()),
    }
}

fn binary(op: BinOp, a: Expr, b: Expr) -> Expr {
    Expr::with_span(ExprKind::Binary(op, Box::new(a), Box::new(b)), Span::default())
}

fn add(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::constant(x + y),
        (Some(x), _) if x == 0.0 => b,
        (_, Some(y)) if y == 0.0 => a,
        _ => binary(BinOp::Add, a, b),
    }
}

fn sub(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::constant(x - y),
        (Some(x), _) if x == 0.0 => neg(b),
        (_, Some(y)) if y == 0.0 => a,
        _ => binary(BinOp::Sub, a, b),
    }
}

fn mul(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        (Some(x), Some(y)) => Expr::constant(x * y),
        (Some(x), _) | (_, Some(x)) if x == 0.0 => Expr::constant(0.0),
        (Some(x), _) if x == 1.0 => b,
        (_, Some(y)) if y == 1.0 => a,
        _ => binary(BinOp::Mul, a, b),
    }
}

fn div(a: Expr, b: Expr) -> Expr {
    match (a.as_const(), b.as_const()) {
        // Exact zero divisors stay symbolic so evaluation reports them.
        (Some(x), Some(y)) if y != 0.0 => Expr::constant(x / y),
        (Some(x), _) if x == 0.0 => Expr::constant(0.0),
        (_, Some(y)) if y == 1.0 => a,
        _ => binary(BinOp::Div, a, b),
    }
}

fn pow(a: Expr, k: u32) -> Expr {
    match (k, a.as_const()) {
        (0, _) => Expr::constant(1.0),
        (1, _) => a,
        (k, Some(c)) => Expr::constant(powi(c, k)),
        (k, None) => Expr::with_span(ExprKind::Pow(Box::new(a), k), Span::default()),
    }
}

// Binding strength used by the printer: + - (1) < * / (2) < unary - (3) < ^ (4).
fn precedence(e: &Expr) -> u8 {
    match &e.kind {
        ExprKind::Const(c) if *c < 0.0 || c.is_sign_negative() => 3,
        ExprKind::Const(_) | ExprKind::Var(_) => 5,
        ExprKind::Neg(_) => 3,
        ExprKind::Binary(BinOp::Add | BinOp::Sub, ..) => 1,
        ExprKind::Binary(BinOp::Mul | BinOp::Div, ..) => 2,
        ExprKind::Pow(..) => 4,
    }
}

fn write_child(f: &mut fmt::Formatter<'_>, e: &Expr, min_prec: u8) -> fmt::Result {
    if precedence(e) < min_prec {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            ExprKind::Const(c) => {
                if c.is_sign_negative() {
                    write!(f, "-{}", -c)
                } else {
                    write!(f, "{c}")
                }
            }
            ExprKind::Var(v) => write!(f, "{v}"),
            ExprKind::Neg(a) => {
                f.write_str("-")?;
                write_child(f, a, 3)
            }
            ExprKind::Binary(op, a, b) => {
                let (sym, p) = match op {
                    BinOp::Add => ("+", 1),
                    BinOp::Sub => ("-", 1),
                    BinOp::Mul => ("*", 2),
                    BinOp::Div => ("/", 2),
                };
                write_child(f, a, p)?;
                f.write_str(sym)?;
                // Left-associative: the right operand needs strictly higher binding.
                write_child(f, b, p + 1)
            }
            ExprKind::Pow(a, k) => {
                write_child(f, a, 5)?;
                write!(f, "^{k}")
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Int(u64),
    X,
    Y,
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
}

fn lex(src: &str) -> Result<Vec<(Tok, Span)>, ExprError> {
    let bytes = src.as_bytes();
    let mut out = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        if c.is_ascii_whitespace() {
            i += 1;
            continue;
        }
        let start = i;
        let single = match c {
            b'x' => Some(Tok::X),
            b'y' => Some(Tok::Y),
            b'+' => Some(Tok::Plus),
            b'-' => Some(Tok::Minus),
            b'*' => Some(Tok::Star),
            b'/' => Some(Tok::Slash),
            b'^' => Some(Tok::Caret),
            b'(' => Some(Tok::LParen),
            b')' => Some(Tok::RParen),
            _ => None,
        };
        if let Some(t) = single {
            i += 1;
            out.push((t, Span { start, end: i }));
            continue;
        }
        if c.is_ascii_digit() || c == b'.' {
            let mut integral = true;
            while i < bytes.len() && bytes[i].is_ascii_digit() {
                i += 1;
            }
            if i < bytes.len() && bytes[i] == b'.' {
                integral = false;
                i += 1;
                while i < bytes.len() && bytes[i].is_ascii_digit() {
                    i += 1;
                }
            }
            if i < bytes.len() && (bytes[i] == b'e' || bytes[i] == b'E') {
                let mut j = i + 1;
                if j < bytes.len() && (bytes[j] == b'+' || bytes[j] == b'-') {
                    j += 1;
                }
                if j < bytes.len() && bytes[j].is_ascii_digit() {
                    integral = false;
                    i = j;
                    while i < bytes.len() && bytes[i].is_ascii_digit() {
                        i += 1;
                    }
                }
            }
            let text = &src[start..i];
            let span = Span { start, end: i };
            let tok = if integral {
                text.parse::<u64>().map(Tok::Int).or_else(|_| text.parse::<f64>().map(Tok::Num))
            } else {
                text.parse::<f64>().map(Tok::Num)
            }
            .map_err(|_| ExprError::Syntax {
                offset: start,
                message: format!("malformed number '{text}'"),
            })?;
            out.push((tok, span));
            continue;
        }
        let ch = src[start..].chars().next().unwrap_or('?');
        return Err(ExprError::Syntax { offset: start, message: format!("unexpected character '{ch}'") });
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<(Tok, Span)>,
    pos: usize,
    src: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn offset(&self) -> usize {
        self.toks.get(self.pos).map(|(_, s)| s.start).unwrap_or(self.src.len())
    }

    fn bump(&mut self) -> (Tok, Span) {
        let t = self.toks[self.pos].clone();
        self.pos += 1;
        t
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        while let Some(op) = match self.peek() {
            Some(Tok::Plus) => Some(BinOp::Add),
            Some(Tok::Minus) => Some(BinOp::Sub),
            _ => None,
        } {
            self.bump();
            let rhs = self.term()?;
            let span = Span { start: lhs.span.start, end: rhs.span.end };
            lhs = Expr::with_span(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span);
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.factor()?;
        while let Some(op) = match self.peek() {
            Some(Tok::Star) => Some(BinOp::Mul),
            Some(Tok::Slash) => Some(BinOp::Div),
            _ => None,
        } {
            self.bump();
            let rhs = self.factor()?;
            let span = Span { start: lhs.span.start, end: rhs.span.end };
            lhs = Expr::with_span(ExprKind::Binary(op, Box::new(lhs), Box::new(rhs)), span);
        }
        Ok(lhs)
    }

    fn factor(&mut self) -> Result<Expr, ExprError> {
        if let Some(Tok::Minus) = self.peek() {
            let (_, s) = self.bump();
            let inner = self.factor()?;
            let span = Span { start: s.start, end: inner.span.end };
            return Ok(Expr::with_span(ExprKind::Neg(Box::new(inner)), span));
        }
        let base = self.atom()?;
        if let Some(Tok::Caret) = self.peek() {
            self.bump();
            let (k, end) = self.exponent()?;
            let span = Span { start: base.span.start, end };
            return Ok(Expr::with_span(ExprKind::Pow(Box::new(base), k), span));
        }
        Ok(base)
    }

    /// `uint ('^' uint)*`, folded right-associatively.
    fn exponent(&mut self) -> Result<(u32, usize), ExprError> {
        let at = self.offset();
        let (tok, span) = match self.peek() {
            Some(_) => self.bump(),
            None => {
                return Err(ExprError::Syntax { offset: at, message: "missing exponent".into() })
            }
        };
        let k = match tok {
            Tok::Int(k) => u32::try_from(k).map_err(|_| ExprError::Domain {
                offset: span.start,
                message: "exponent too large".into(),
            })?,
            _ => {
                return Err(ExprError::Domain {
                    offset: span.start,
                    message: "exponent must be a nonnegative integer literal".into(),
                })
            }
        };
        if let Some(Tok::Caret) = self.peek() {
            self.bump();
            let (inner, end) = self.exponent()?;
            let folded = k.checked_pow(inner).ok_or(ExprError::Domain {
                offset: span.start,
                message: "exponent too large".into(),
            })?;
            return Ok((folded, end));
        }
        Ok((k, span.end))
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        let at = self.offset();
        let Some(_) = self.peek() else {
            return Err(ExprError::Syntax { offset: at, message: "unexpected end of input".into() });
        };
        let (tok, span) = self.bump();
        match tok {
            Tok::Num(c) => Ok(Expr::with_span(ExprKind::Const(c), span)),
            Tok::Int(k) => Ok(Expr::with_span(ExprKind::Const(k as f64), span)),
            Tok::X => Ok(Expr::with_span(ExprKind::Var(Var::X), span)),
            Tok::Y => Ok(Expr::with_span(ExprKind::Var(Var::Y), span)),
            Tok::LParen => {
                let inner = self.expr()?;
                match self.peek() {
                    Some(Tok::RParen) => {
                        let (_, close) = self.bump();
                        Ok(Expr { span: Span { start: span.start, end: close.end }, ..inner })
                    }
                    _ => Err(ExprError::Syntax { offset: self.offset(), message: "expected ')'".into() }),
                }
            }
            other => Err(ExprError::Syntax {
                offset: span.start,
                message: format!("unexpected token {other:?}"),
            }),
        }
    }
}

/// Parses a selection function source string.
pub fn parse_selection(src: &str) -> Result<Expr, ExprError> {
    if src.trim().is_empty() {
        return Err(ExprError::Syntax { offset: 0, message: "empty expression".into() });
    }
    let toks = lex(src)?;
    let mut p = Parser { toks, pos: 0, src };
    let e = p.expr()?;
    if p.pos != p.toks.len() {
        return Err(ExprError::Syntax { offset: p.offset(), message: "trailing input".into() });
    }
    Ok(e)
}

/// A selection function bound to a grid, with its symbolic partials.
#[derive(Debug, Clone)]
pub struct SelectionFn {
    pub m: Expr,
    pub dx_m: Expr,
    pub dy_m: Expr,
    pub dxx_m: Expr,
    pub dyy_m: Expr,
    /// Max of |m| over the grid nodes; surrogate for the sup norm.
    pub sup_m_on_grid: f64,
    grid: GridSpec,
    nodes: Vec<f64>,
}

impl SelectionFn {
    pub fn bind(m: Expr, grid: &GridSpec) -> Result<Self, ExprError> {
        let dx_m = m.differentiate(Var::X);
        let dy_m = m.differentiate(Var::Y);
        let dxx_m = dx_m.differentiate(Var::X);
        let dyy_m = dy_m.differentiate(Var::Y);
        let mut nodes = Vec::with_capacity(grid.len());
        let mut sup = 0.0f64;
        for i in 0..grid.nx {
            for j in 0..grid.ny {
                let v = m.eval(grid.x(i), grid.y(j))?;
                sup = sup.max(v.abs());
                nodes.push(v);
            }
        }
        Ok(SelectionFn { m, dx_m, dy_m, dxx_m, dyy_m, sup_m_on_grid: sup, grid: grid.clone(), nodes })
    }

    pub fn parse_and_bind(src: &str, grid: &GridSpec) -> Result<Self, ExprError> {
        Self::bind(parse_selection(src)?, grid)
    }

    pub fn grid(&self) -> &GridSpec {
        &self.grid
    }

    /// m evaluated at every node, row-major (x index major).
    pub fn node_values(&self) -> &[f64] {
        &self.nodes
    }

    pub fn value(&self, x: f64, y: f64) -> Result<f64, ExprError> {
        self.m.eval(x, y)
    }

    pub fn grad(&self, x: f64, y: f64) -> Result<(f64, f64), ExprError> {
        Ok((self.dx_m.eval(x, y)?, self.dy_m.eval(x, y)?))
    }

    /// Whether ∂xx m is structurally free of x (and ∂yy m free of y).
    pub fn curvature_is_frozen_exact(&self) -> bool {
        !self.dxx_m.contains_var(Var::X) && !self.dyy_m.contains_var(Var::Y)
    }
}
