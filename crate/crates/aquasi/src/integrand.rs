//! A small expression language for integrands `g: R^n -> R`, with exact
//! evaluation, forward-mode gradients and a few named presets.
//!
//! Syntax: variables `v1..vn`, decimal literals, `+ - * / ^` (integer
//! powers), `min`, `max`, `abs`, `sq`, and `cap(expr, M)` for finitely
//! capped integrands. Division is only accepted when the denominator is a
//! nonzero literal or is floored by `max(..., c)` with a positive literal.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ParseError {
    #[error("syntax error at {line}:{col}: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{name} expects {expected} argument(s), got {got}")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
    },
    #[error("unbound variable '{0}'")]
    UnboundVariable(String),
    #[error("denominator may vanish; guard it with max(..., c) for a positive constant c")]
    UnsafeDivision,
    #[error("empty integrand source")]
    Empty,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Div(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, i32),
    Min(Box<Expr>, Box<Expr>),
    Max(Box<Expr>, Box<Expr>),
    Abs(Box<Expr>),
    Sq(Box<Expr>),
    Cap(Box<Expr>, f64),
}

/// A parsed integrand with its declared dimension.
#[derive(Debug, Clone)]
pub struct IntegrandExpr {
    pub ast: Expr,
    pub dim: usize,
}

/// Evaluation interface shared by parsed expressions and tabulated
/// integrands.
pub trait Integrand: Sync {
    fn dim(&self) -> usize;
    fn value(&self, v: &[f64]) -> f64;
    fn gradient(&self, v: &[f64], out: &mut [f64]);
    /// Finite cap above which values count as infeasible, if any.
    fn cap(&self) -> Option<f64> {
        None
    }
}

impl Integrand for IntegrandExpr {
    fn dim(&self) -> usize {
        self.dim
    }
    fn value(&self, v: &[f64]) -> f64 {
        eval(&self.ast, v)
    }
    fn gradient(&self, v: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        grad_into(&self.ast, v, 1.0, out);
    }
    fn cap(&self) -> Option<f64> {
        fn find(e: &Expr) -> Option<f64> {
            match e {
                Expr::Cap(inner, m) => Some(find(inner).map_or(*m, |x| x.min(*m))),
                Expr::Const(_) | Expr::Var(_) => None,
                Expr::Neg(a) | Expr::Abs(a) | Expr::Sq(a) | Expr::Pow(a, _) => find(a),
                Expr::Add(a, b)
                | Expr::Sub(a, b)
                | Expr::Mul(a, b)
                | Expr::Div(a, b)
                | Expr::Min(a, b)
                | Expr::Max(a, b) => match (find(a), find(b)) {
                    (Some(x), Some(y)) => Some(x.min(y)),
                    (x, y) => x.or(y),
                },
            }
        }
        find(&self.ast)
    }
}

pub fn eval(e: &Expr, v: &[f64]) -> f64 {
    match e {
        Expr::Const(c) => *c,
        Expr::Var(i) => v[*i],
        Expr::Neg(a) => -eval(a, v),
        Expr::Add(a, b) => eval(a, v) + eval(b, v),
        Expr::Sub(a, b) => eval(a, v) - eval(b, v),
        Expr::Mul(a, b) => eval(a, v) * eval(b, v),
        Expr::Div(a, b) => eval(a, v) / eval(b, v),
        Expr::Pow(a, k) => eval(a, v).powi(*k),
        Expr::Min(a, b) => eval(a, v).min(eval(b, v)),
        Expr::Max(a, b) => eval(a, v).max(eval(b, v)),
        Expr::Abs(a) => eval(a, v).abs(),
        Expr::Sq(a) => {
            let x = eval(a, v);
            x * x
        }
        Expr::Cap(a, m) => eval(a, v).min(*m),
    }
}

/// Accumulates `seed * d(e)/dv` into `out`. min/max take the left branch
/// at ties; abs uses sign with sign(0) = +1.
fn grad_into(e: &Expr, v: &[f64], seed: f64, out: &mut [f64]) {
    match e {
        Expr::Const(_) => {}
        Expr::Var(i) => out[*i] += seed,
        Expr::Neg(a) => grad_into(a, v, -seed, out),
        Expr::Add(a, b) => {
            grad_into(a, v, seed, out);
            grad_into(b, v, seed, out);
        }
        Expr::Sub(a, b) => {
            grad_into(a, v, seed, out);
            grad_into(b, v, -seed, out);
        }
        Expr::Mul(a, b) => {
            let (fa, fb) = (eval(a, v), eval(b, v));
            grad_into(a, v, seed * fb, out);
            grad_into(b, v, seed * fa, out);
        }
        Expr::Div(a, b) => {
            let (fa, fb) = (eval(a, v), eval(b, v));
            grad_into(a, v, seed / fb, out);
            grad_into(b, v, -seed * fa / (fb * fb), out);
        }
        Expr::Pow(a, k) => {
            let fa = eval(a, v);
            grad_into(a, v, seed * *k as f64 * fa.powi(*k - 1), out);
        }
        Expr::Min(a, b) => {
            if eval(a, v) <= eval(b, v) {
                grad_into(a, v, seed, out);
            } else {
                grad_into(b, v, seed, out);
            }
        }
        Expr::Max(a, b) => {
            if eval(a, v) >= eval(b, v) {
                grad_into(a, v, seed, out);
            } else {
                grad_into(b, v, seed, out);
            }
        }
        Expr::Abs(a) => {
            let s = if eval(a, v) >= 0.0 { 1.0 } else { -1.0 };
            grad_into(a, v, seed * s, out);
        }
        Expr::Sq(a) => {
            let fa = eval(a, v);
            grad_into(a, v, seed * 2.0 * fa, out);
        }
        Expr::Cap(a, m) => {
            if eval(a, v) < *m {
                grad_into(a, v, seed, out);
            }
        }
    }
}

pub fn grad(expr: &IntegrandExpr, v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; expr.dim];
    expr.gradient(v, &mut out);
    out
}

// ---------------------------------------------------------------- parser

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
    LParen,
    RParen,
    Comma,
}

struct Lexer {
    toks: Vec<(Tok, usize, usize)>,
    pos: usize,
}

fn lex(src: &str) -> Result<Lexer, ParseError> {
    let mut toks = Vec::new();
    let (mut line, mut col) = (1usize, 1usize);
    let bytes: Vec<char> = src.chars().collect();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i];
        let (l0, c0) = (line, col);
        let mut push = |t: Tok| toks.push((t, l0, c0));
        match c {
            '\n' => {
                line += 1;
                col = 0;
            }
            ' ' | '\t' | '\r' => {}
            '+' => push(Tok::Plus),
            '-' => push(Tok::Minus),
            '*' => push(Tok::Star),
            '/' => push(Tok::Slash),
            '^' => push(Tok::Caret),
            '(' => push(Tok::LParen),
            ')' => push(Tok::RParen),
            ',' => push(Tok::Comma),
            _ if c.is_ascii_digit() || c == '.' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_digit()
                        || bytes[i] == '.'
                        || bytes[i] == 'e'
                        || bytes[i] == 'E'
                        || ((bytes[i] == '+' || bytes[i] == '-')
                            && i > start
                            && (bytes[i - 1] == 'e' || bytes[i - 1] == 'E')))
                {
                    i += 1;
                    col += 1;
                }
                let s: String = bytes[start..i].iter().collect();
                let val = s.parse::<f64>().map_err(|_| ParseError::Syntax {
                    line: l0,
                    col: c0,
                    msg: format!("bad number literal '{s}'"),
                })?;
                toks.push((Tok::Num(val), l0, c0));
                continue;
            }
            _ if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < bytes.len()
                    && (bytes[i].is_ascii_alphanumeric() || bytes[i] == '_' || bytes[i] == '-')
                {
                    // identifiers never contain '-'; stop before operators
                    if bytes[i] == '-' {
                        break;
                    }
                    i += 1;
                    col += 1;
                }
                let s: String = bytes[start..i].iter().collect();
                toks.push((Tok::Ident(s), l0, c0));
                continue;
            }
            other => {
                return Err(ParseError::Syntax {
                    line,
                    col,
                    msg: format!("unexpected character '{other}'"),
                })
            }
        }
        i += 1;
        col += 1;
    }
    Ok(Lexer { toks, pos: 0 })
}

impl Lexer {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|t| &t.0)
    }
    fn next(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).cloned();
        self.pos += 1;
        t.map(|t| t.0)
    }
    fn here(&self) -> (usize, usize) {
        self.toks
            .get(self.pos)
            .or_else(|| self.toks.last())
            .map(|t| (t.1, t.2))
            .unwrap_or((1, 1))
    }
    fn err(&self, msg: impl Into<String>) -> ParseError {
        let (line, col) = self.here();
        ParseError::Syntax {
            line,
            col,
            msg: msg.into(),
        }
    }
}

pub fn parse_integrand(src: &str, n: usize) -> Result<IntegrandExpr, ParseError> {
    if src.trim().is_empty() {
        return Err(ParseError::Empty);
    }
    let mut lx = lex(src)?;
    let ast = parse_sum(&mut lx, n)?;
    if lx.peek().is_some() {
        return Err(lx.err("trailing input"));
    }
    Ok(IntegrandExpr { ast, dim: n })
}

fn parse_sum(lx: &mut Lexer, n: usize) -> Result<Expr, ParseError> {
    let mut lhs = parse_term(lx, n)?;
    loop {
        match lx.peek() {
            Some(Tok::Plus) => {
                lx.next();
                lhs = Expr::Add(Box::new(lhs), Box::new(parse_term(lx, n)?));
            }
            Some(Tok::Minus) => {
                lx.next();
                lhs = Expr::Sub(Box::new(lhs), Box::new(parse_term(lx, n)?));
            }
            _ => return Ok(lhs),
        }
    }
}

fn parse_term(lx: &mut Lexer, n: usize) -> Result<Expr, ParseError> {
    let mut lhs = parse_unary(lx, n)?;
    loop {
        match lx.peek() {
            Some(Tok::Star) => {
                lx.next();
                lhs = Expr::Mul(Box::new(lhs), Box::new(parse_unary(lx, n)?));
            }
            Some(Tok::Slash) => {
                lx.next();
                let rhs = parse_unary(lx, n)?;
                if !denominator_is_safe(&rhs) {
                    return Err(ParseError::UnsafeDivision);
                }
                lhs = Expr::Div(Box::new(lhs), Box::new(rhs));
            }
            _ => return Ok(lhs),
        }
    }
}

fn parse_unary(lx: &mut Lexer, n: usize) -> Result<Expr, ParseError> {
    if matches!(lx.peek(), Some(Tok::Minus)) {
        lx.next();
        return Ok(Expr::Neg(Box::new(parse_unary(lx, n)?)));
    }
    parse_power(lx, n)
}

fn parse_power(lx: &mut Lexer, n: usize) -> Result<Expr, ParseError> {
    let base = parse_atom(lx, n)?;
    if matches!(lx.peek(), Some(Tok::Caret)) {
        lx.next();
        let neg = if matches!(lx.peek(), Some(Tok::Minus)) {
            lx.next();
            true
        } else {
            false
        };
        match lx.next() {
            Some(Tok::Num(x)) if x.fract() == 0.0 && x.abs() <= i32::MAX as f64 => {
                let k = x as i32 * if neg { -1 } else { 1 };
                if k < 0 && !denominator_is_safe(&base) {
                    return Err(ParseError::UnsafeDivision);
                }
                Ok(Expr::Pow(Box::new(base), k))
            }
            _ => Err(lx.err("exponent must be an integer literal")),
        }
    } else {
        Ok(base)
    }
}

fn parse_atom(lx: &mut Lexer, n: usize) -> Result<Expr, ParseError> {
    match lx.next() {
        Some(Tok::Num(x)) => Ok(Expr::Const(x)),
        Some(Tok::LParen) => {
            let inner = parse_sum(lx, n)?;
            match lx.next() {
                Some(Tok::RParen) => Ok(inner),
                _ => Err(lx.err("expected ')'")),
            }
        }
        Some(Tok::Ident(name)) => {
            if matches!(lx.peek(), Some(Tok::LParen)) {
                lx.next();
                let mut args = vec![parse_sum(lx, n)?];
                while matches!(lx.peek(), Some(Tok::Comma)) {
                    lx.next();
                    args.push(parse_sum(lx, n)?);
                }
                match lx.next() {
                    Some(Tok::RParen) => {}
                    _ => return Err(lx.err("expected ')'")),
                }
                build_call(&name, args)
            } else if let Some(rest) = name.strip_prefix('v') {
                if let Ok(idx) = rest.parse::<usize>() {
                    if idx >= 1 && idx <= n {
                        return Ok(Expr::Var(idx - 1));
                    }
                }
                Err(ParseError::UnboundVariable(name))
            } else {
                Err(ParseError::UnboundVariable(name))
            }
        }
        _ => Err(lx.err("expected a value")),
    }
}

fn build_call(name: &str, mut args: Vec<Expr>) -> Result<Expr, ParseError> {
    let arity = |expected: usize, args: &Vec<Expr>| -> Result<(), ParseError> {
        if args.len() != expected {
            Err(ParseError::Arity {
                name: name.into(),
                expected,
                got: args.len(),
            })
        } else {
            Ok(())
        }
    };
    match name {
        "min" => {
            arity(2, &args)?;
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            Ok(Expr::Min(Box::new(a), Box::new(b)))
        }
        "max" => {
            arity(2, &args)?;
            let b = args.pop().unwrap();
            let a = args.pop().unwrap();
            Ok(Expr::Max(Box::new(a), Box::new(b)))
        }
        "abs" => {
            arity(1, &args)?;
            Ok(Expr::Abs(Box::new(args.pop().unwrap())))
        }
        "sq" => {
            arity(1, &args)?;
            Ok(Expr::Sq(Box::new(args.pop().unwrap())))
        }
        "cap" => {
            arity(2, &args)?;
            let m = args.pop().unwrap();
            let a = args.pop().unwrap();
            match m {
                Expr::Const(m) if m > 0.0 => Ok(Expr::Cap(Box::new(a), m)),
                _ => Err(ParseError::Arity {
                    name: "cap (second argument must be a positive literal)".into(),
                    expected: 2,
                    got: 2,
                }),
            }
        }
        other => Err(ParseError::UnboundVariable(other.into())),
    }
}

/// Parse-time guard: a denominator is accepted when it provably stays away
/// from zero.
fn denominator_is_safe(e: &Expr) -> bool {
    match e {
        Expr::Const(c) => *c != 0.0,
        Expr::Neg(a) => denominator_is_safe(a),
        Expr::Max(_, b) if matches!(**b, Expr::Const(c) if c > 0.0) => true,
        Expr::Max(a, _) if matches!(**a, Expr::Const(c) if c > 0.0) => true,
        _ => false,
    }
}

pub fn pretty_print(e: &Expr) -> String {
    match e {
        Expr::Const(c) => format!("{c}"),
        Expr::Var(i) => format!("v{}", i + 1),
        Expr::Neg(a) => format!("(-{})", pretty_print(a)),
        Expr::Add(a, b) => format!("({} + {})", pretty_print(a), pretty_print(b)),
        Expr::Sub(a, b) => format!("({} - {})", pretty_print(a), pretty_print(b)),
        Expr::Mul(a, b) => format!("({} * {})", pretty_print(a), pretty_print(b)),
        Expr::Div(a, b) => format!("({} / {})", pretty_print(a), pretty_print(b)),
        Expr::Pow(a, k) => format!("({} ^ {k})", pretty_print(a)),
        Expr::Min(a, b) => format!("min({}, {})", pretty_print(a), pretty_print(b)),
        Expr::Max(a, b) => format!("max({}, {})", pretty_print(a), pretty_print(b)),
        Expr::Abs(a) => format!("abs({})", pretty_print(a)),
        Expr::Sq(a) => format!("sq({})", pretty_print(a)),
        Expr::Cap(a, m) => format!("cap({}, {m})", pretty_print(a)),
    }
}

/// Named integrands used by the CLI and the tests.
pub fn preset_integrand(name: &str) -> Option<IntegrandExpr> {
    let (src, n) = match name {
        "doublewell2" => ("sq(sq(v1)+sq(v2)-1)", 2),
        "remark-min" => ("min(sq(v1-1)+sq(v2), sq(v1+1)+sq(v2))", 2),
        "remark-rational-branch" => ("sq(v1-1)+sq(v2)", 2),
        _ => return None,
    };
    Some(parse_integrand(src, n).expect("preset integrands parse"))
}

#[derive(Debug, Clone)]
pub struct CoercivityResult {
    pub ok: bool,
    pub witness: Option<Vec<f64>>,
}

/// Advisory probe of `g(v) >= C |v|^p - 1/C` at radii `R/2, R, 2R` over a
/// deterministic direction set.
pub fn coercivity_probe(expr: &dyn Integrand, c: f64, p: f64, radius: f64) -> CoercivityResult {
    assert!(radius > 0.0 && c > 0.0);
    let dirs = crate::operator::sphere_directions(expr.dim(), 64);
    for scale in [radius / 2.0, radius, 2.0 * radius] {
        for w in &dirs {
            let v: Vec<f64> = w.iter().map(|x| x * scale).collect();
            let bound = c * scale.powf(p) - 1.0 / c;
            if expr.value(&v) < bound {
                return CoercivityResult {
                    ok: false,
                    witness: Some(v),
                };
            }
        }
    }
    CoercivityResult { ok: true, witness: None }
}
