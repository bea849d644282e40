//! A small scalar expression language for describing system nonlinearities.
//!
//! Expressions are parsed from text such as `x2 + 0.25*sin(0.1*x1*x2)` over
//! a caller-supplied list of variable names, evaluated on `f64` slices, and
//! differentiated exactly via forward-mode dual numbers.  Supported syntax:
//! floating-point literals (with optional exponent), named variables, the
//! operators `+ - * / ^` (with `^` binding tightest and associating to the
//! right), unary minus, parentheses, and the functions `sin`, `cos`, `tan`,
//! `exp`, `tanh`, `abs`, `sqrt`.
//!
//! The parser folds a unary minus applied to a literal into the constant
//! itself, so printing an expression with [`std::fmt::Display`] and parsing
//! it back reproduces the identical syntax tree.

use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UnaryOp {
    Neg,
    Sin,
    Cos,
    Tan,
    Exp,
    Tanh,
    Abs,
    Sqrt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Syntax tree of a scalar expression.  Variables are stored as indices
/// into the name list given to [`Expr::parse`], so evaluation needs no
/// name lookups.
#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Const(f64),
    Var(usize),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
}

/// A parse failure, carrying the byte offset into the input at which it was
/// detected.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("parse error at byte {position}: {message}")]
pub struct ParseError {
    pub position: usize,
    pub message: String,
}

/// First-order dual number `value + deriv·ε` used for forward-mode
/// differentiation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dual {
    pub value: f64,
    pub deriv: f64,
}

impl Dual {
    pub fn constant(value: f64) -> Self {
        Dual { value, deriv: 0.0 }
    }

    fn add(self, o: Dual) -> Dual {
        Dual {
            value: self.value + o.value,
            deriv: self.deriv + o.deriv,
        }
    }

    fn sub(self, o: Dual) -> Dual {
        Dual {
            value: self.value - o.value,
            deriv: self.deriv - o.deriv,
        }
    }

    fn mul(self, o: Dual) -> Dual {
        Dual {
            value: self.value * o.value,
            deriv: self.deriv * o.value + self.value * o.deriv,
        }
    }

    fn div(self, o: Dual) -> Dual {
        Dual {
            value: self.value / o.value,
            deriv: (self.deriv * o.value - self.value * o.deriv) / (o.value * o.value),
        }
    }

    /// `self ^ o`.  When the exponent carries no derivative the ordinary
    /// power rule applies (valid for negative bases with integer exponents);
    /// otherwise the full `a^b (b' ln a + b a'/a)` form is used.
    fn pow(self, o: Dual) -> Dual {
        let value = self.value.powf(o.value);
        let deriv = if o.deriv == 0.0 {
            o.value * self.value.powf(o.value - 1.0) * self.deriv
        } else {
            value * (o.deriv * self.value.ln() + o.value * self.deriv / self.value)
        };
        Dual { value, deriv }
    }

    fn apply(self, op: UnaryOp) -> Dual {
        let (value, slope) = match op {
            UnaryOp::Neg => return Dual { value: -self.value, deriv: -self.deriv },
            UnaryOp::Sin => (self.value.sin(), self.value.cos()),
            UnaryOp::Cos => (self.value.cos(), -self.value.sin()),
            UnaryOp::Tan => {
                let c = self.value.cos();
                (self.value.tan(), 1.0 / (c * c))
            }
            UnaryOp::Exp => {
                let e = self.value.exp();
                (e, e)
            }
            UnaryOp::Tanh => {
                let t = self.value.tanh();
                (t, 1.0 - t * t)
            }
            // one-sided derivative at the kink: sign(0) := 1
            UnaryOp::Abs => (
                self.value.abs(),
                if self.value < 0.0 { -1.0 } else { 1.0 },
            ),
            UnaryOp::Sqrt => {
                let s = self.value.sqrt();
                (s, 0.5 / s)
            }
        };
        Dual {
            value,
            deriv: slope * self.deriv,
        }
    }
}

impl Expr {
    /// Parses `text` over the variable names `vars`; every identifier that
    /// is not a function call must appear in `vars` and becomes a
    /// [`Expr::Var`] holding its index.
    pub fn parse(text: &str, vars: &[&str]) -> Result<Expr, ParseError> {
        let mut p = Parser {
            input: text.as_bytes(),
            pos: 0,
            vars,
        };
        p.skip_ws();
        let e = p.expr()?;
        p.skip_ws();
        if p.pos != p.input.len() {
            return Err(p.err("unexpected trailing input"));
        }
        Ok(e)
    }

    /// Evaluates at the point `x`; `x` must cover every variable index in
    /// the expression (guaranteed when `x.len()` equals the length of the
    /// name list the expression was parsed against).
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            Expr::Const(c) => *c,
            Expr::Var(i) => x[*i],
            Expr::Unary(op, a) => {
                let v = a.eval(x);
                match op {
                    UnaryOp::Neg => -v,
                    UnaryOp::Sin => v.sin(),
                    UnaryOp::Cos => v.cos(),
                    UnaryOp::Tan => v.tan(),
                    UnaryOp::Exp => v.exp(),
                    UnaryOp::Tanh => v.tanh(),
                    UnaryOp::Abs => v.abs(),
                    UnaryOp::Sqrt => v.sqrt(),
                }
            }
            Expr::Binary(op, a, b) => {
                let l = a.eval(x);
                let r = b.eval(x);
                match op {
                    BinaryOp::Add => l + r,
                    BinaryOp::Sub => l - r,
                    BinaryOp::Mul => l * r,
                    BinaryOp::Div => l / r,
                    BinaryOp::Pow => l.powf(r),
                }
            }
        }
    }

    /// Evaluates value and derivative with respect to variable `seed` in one
    /// forward pass.
    pub fn eval_dual(&self, x: &[f64], seed: usize) -> Dual {
        match self {
            Expr::Const(c) => Dual::constant(*c),
            Expr::Var(i) => Dual {
                value: x[*i],
                deriv: if *i == seed { 1.0 } else { 0.0 },
            },
            Expr::Unary(op, a) => a.eval_dual(x, seed).apply(*op),
            Expr::Binary(op, a, b) => {
                let l = a.eval_dual(x, seed);
                let r = b.eval_dual(x, seed);
                match op {
                    BinaryOp::Add => l.add(r),
                    BinaryOp::Sub => l.sub(r),
                    BinaryOp::Mul => l.mul(r),
                    BinaryOp::Div => l.div(r),
                    BinaryOp::Pow => l.pow(r),
                }
            }
        }
    }

    /// Partial derivative with respect to variable `j` at the point `x`.
    pub fn partial(&self, x: &[f64], j: usize) -> f64 {
        self.eval_dual(x, j).deriv
    }

    /// Largest variable index referenced, if any.
    pub fn max_var(&self) -> Option<usize> {
        match self {
            Expr::Const(_) => None,
            Expr::Var(i) => Some(*i),
            Expr::Unary(_, a) => a.max_var(),
            Expr::Binary(_, a, b) => match (a.max_var(), b.max_var()) {
                (Some(x), Some(y)) => Some(x.max(y)),
                (x, y) => x.or(y),
            },
        }
    }
}

const FUNCTIONS: &[(&str, UnaryOp)] = &[
    ("sin", UnaryOp::Sin),
    ("cos", UnaryOp::Cos),
    ("tan", UnaryOp::Tan),
    ("exp", UnaryOp::Exp),
    ("tanh", UnaryOp::Tanh),
    ("abs", UnaryOp::Abs),
    ("sqrt", UnaryOp::Sqrt),
];

struct Parser<'a> {
    input: &'a [u8],
    pos: usize,
    vars: &'a [&'a str],
}

impl<'a> Parser<'a> {
    fn err(&self, message: &str) -> ParseError {
        ParseError {
            position: self.pos,
            message: message.to_string(),
        }
    }

    fn skip_ws(&mut self) {
        while self.pos < self.input.len() && self.input[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&self) -> Option<u8> {
        self.input.get(self.pos).copied()
    }

    fn eat(&mut self, c: u8) -> bool {
        if self.peek() == Some(c) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    // expr := term (('+'|'-') term)*
    fn expr(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.term()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some(b'+') => BinaryOp::Add,
                Some(b'-') => BinaryOp::Sub,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            self.skip_ws();
            let rhs = self.term()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    // term := unary (('*'|'/') unary)*
    fn term(&mut self) -> Result<Expr, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            self.skip_ws();
            let op = match self.peek() {
                Some(b'*') => BinaryOp::Mul,
                Some(b'/') => BinaryOp::Div,
                _ => return Ok(lhs),
            };
            self.pos += 1;
            self.skip_ws();
            let rhs = self.unary()?;
            lhs = Expr::Binary(op, Box::new(lhs), Box::new(rhs));
        }
    }

    // unary := '-' unary | power, folding '-' on a literal into the constant
    fn unary(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        if self.eat(b'-') {
            let inner = self.unary()?;
            return Ok(match inner {
                Expr::Const(c) => Expr::Const(-c),
                other => Expr::Unary(UnaryOp::Neg, Box::new(other)),
            });
        }
        self.power()
    }

    // power := atom ('^' unary)?   (right-associative)
    fn power(&mut self) -> Result<Expr, ParseError> {
        let base = self.atom()?;
        self.skip_ws();
        if self.eat(b'^') {
            self.skip_ws();
            let exp = self.unary()?;
            return Ok(Expr::Binary(BinaryOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Expr, ParseError> {
        self.skip_ws();
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.skip_ws();
                if !self.eat(b')') {
                    return Err(self.err("expected ')'"));
                }
                Ok(e)
            }
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if c.is_ascii_alphabetic() || c == b'_' => self.identifier(),
            Some(_) => Err(self.err("expected a number, variable, function, or '('")),
            None => Err(self.err("unexpected end of input")),
        }
    }

    fn number(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.eat(b'.') {
            while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                self.pos += 1;
            }
        }
        if matches!(self.peek(), Some(b'e') | Some(b'E')) {
            let mark = self.pos;
            self.pos += 1;
            if matches!(self.peek(), Some(b'+') | Some(b'-')) {
                self.pos += 1;
            }
            if matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                while matches!(self.peek(), Some(c) if c.is_ascii_digit()) {
                    self.pos += 1;
                }
            } else {
                // not an exponent after all (e.g. "2e" followed by junk)
                self.pos = mark;
            }
        }
        let text = std::str::from_utf8(&self.input[start..self.pos]).expect("ascii slice");
        text.parse::<f64>()
            .map(Expr::Const)
            .map_err(|_| ParseError {
                position: start,
                message: format!("invalid number literal '{text}'"),
            })
    }

    fn identifier(&mut self) -> Result<Expr, ParseError> {
        let start = self.pos;
        while matches!(self.peek(), Some(c) if c.is_ascii_alphanumeric() || c == b'_') {
            self.pos += 1;
        }
        let name = std::str::from_utf8(&self.input[start..self.pos]).expect("ascii slice");
        self.skip_ws();
        if self.peek() == Some(b'(') {
            let op = FUNCTIONS
                .iter()
                .find(|(f, _)| *f == name)
                .map(|(_, op)| *op)
                .ok_or_else(|| ParseError {
                    position: start,
                    message: format!("unknown function '{name}'"),
                })?;
            self.pos += 1; // consume '('
            let arg = self.expr()?;
            self.skip_ws();
            if !self.eat(b')') {
                return Err(self.err("expected ')' closing function argument"));
            }
            return Ok(Expr::Unary(op, Box::new(arg)));
        }
        match self.vars.iter().position(|v| *v == name) {
            Some(i) => Ok(Expr::Var(i)),
            None => Err(ParseError {
                position: start,
                message: format!("unknown variable '{name}'"),
            }),
        }
    }
}

// ---- printing ------------------------------------------------------------

fn precedence(e: &Expr) -> u8 {
    match e {
        Expr::Binary(BinaryOp::Add | BinaryOp::Sub, ..) => 1,
        Expr::Binary(BinaryOp::Mul | BinaryOp::Div, ..) => 2,
        Expr::Unary(UnaryOp::Neg, _) => 3,
        // a negative literal prints with a leading '-', so treat it like a
        // unary minus when deciding on parentheses
        Expr::Const(c) if c.is_sign_negative() => 3,
        Expr::Binary(BinaryOp::Pow, ..) => 4,
        _ => 5,
    }
}

impl Expr {
    fn fmt_prec(&self, f: &mut fmt::Formatter<'_>, min_prec: u8) -> fmt::Result {
        let needs_parens = precedence(self) < min_prec;
        if needs_parens {
            write!(f, "(")?;
        }
        match self {
            Expr::Const(c) => write!(f, "{c}")?,
            Expr::Var(i) => write!(f, "v{i}")?,
            Expr::Unary(UnaryOp::Neg, a) => {
                write!(f, "-")?;
                a.fmt_prec(f, 3)?;
            }
            Expr::Unary(op, a) => {
                let name = FUNCTIONS
                    .iter()
                    .find(|(_, o)| o == op)
                    .map(|(n, _)| *n)
                    .expect("every non-Neg unary op is a named function");
                write!(f, "{name}(")?;
                a.fmt_prec(f, 0)?;
                write!(f, ")")?;
            }
            Expr::Binary(op, a, b) => {
                let (sym, prec) = match op {
                    BinaryOp::Add => ("+", 1),
                    BinaryOp::Sub => ("-", 1),
                    BinaryOp::Mul => ("*", 2),
                    BinaryOp::Div => ("/", 2),
                    BinaryOp::Pow => ("^", 4),
                };
                // left-associative ops demand strictly higher precedence on
                // the right; `^` is right-associative and demands it on the
                // left
                let (lmin, rmin) = if *op == BinaryOp::Pow {
                    (prec + 1, prec)
                } else {
                    (prec, prec + 1)
                };
                a.fmt_prec(f, lmin)?;
                write!(f, " {sym} ")?;
                b.fmt_prec(f, rmin)?;
            }
        }
        if needs_parens {
            write!(f, ")")?;
        }
        Ok(())
    }
}

/// Prints the expression with variables rendered as `v<index>`, inserting
/// parentheses so that re-parsing (over matching names) reproduces the same
/// tree.
impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.fmt_prec(f, 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    const VARS: &[&str] = &["x1", "x2", "k"];

    fn parse(s: &str) -> Expr {
        Expr::parse(s, VARS).unwrap()
    }

    #[test]
    fn parses_and_evaluates_arithmetic() {
        let e = parse("1 + 2*3 - 4/8");
        assert_abs_diff_eq!(e.eval(&[0.0, 0.0, 0.0]), 6.5);
    }

    #[test]
    fn power_is_right_associative_and_binds_tightest() {
        let e = parse("2*3^2");
        assert_abs_diff_eq!(e.eval(&[0.0, 0.0, 0.0]), 18.0);
        let e = parse("2^3^2"); // 2^(3^2) = 512
        assert_abs_diff_eq!(e.eval(&[0.0, 0.0, 0.0]), 512.0);
        let e = parse("-2^2"); // -(2^2)
        assert_abs_diff_eq!(e.eval(&[0.0, 0.0, 0.0]), -4.0);
    }

    #[test]
    fn scientific_literals() {
        assert_abs_diff_eq!(parse("2.5e-3").eval(&[0.0; 3]), 0.0025);
        assert_abs_diff_eq!(parse("1E2 + .5").eval(&[0.0; 3]), 100.5);
    }

    #[test]
    fn variables_resolve_by_name() {
        let e = parse("x2 + 0.25*sin(0.1*x1*x2)");
        let x = [2.0, -1.0, 0.0];
        assert_relative_eq!(
            e.eval(&x),
            -1.0 + 0.25 * (-(0.1 * 2.0f64)).sin(),
            epsilon = 1e-15
        );
        assert_eq!(e.max_var(), Some(1));
    }

    #[test]
    fn unknown_variable_is_rejected_with_position() {
        let err = Expr::parse("x1 + x9", VARS).unwrap_err();
        assert_eq!(err.position, 5);
        assert!(err.message.contains("x9"));
    }

    #[test]
    fn unknown_function_is_rejected() {
        let err = Expr::parse("sinh(x1)", VARS).unwrap_err();
        assert!(err.message.contains("sinh"));
    }

    #[test]
    fn trailing_input_is_rejected() {
        assert!(Expr::parse("x1 x2", VARS).is_err());
        assert!(Expr::parse("(x1", VARS).is_err());
        assert!(Expr::parse("", VARS).is_err());
    }

    #[test]
    fn dual_derivatives_match_closed_forms() {
        let x = [0.3, -0.8, 0.0];
        // d/dx1 of x1^2 * x2 = 2 x1 x2
        let e = parse("x1^2 * x2");
        assert_relative_eq!(e.partial(&x, 0), 2.0 * 0.3 * -0.8, epsilon = 1e-14);
        // d/dx2 of exp(x1*x2) = x1 exp(x1 x2)
        let e = parse("exp(x1*x2)");
        assert_relative_eq!(
            e.partial(&x, 1),
            0.3 * (0.3 * -0.8f64).exp(),
            epsilon = 1e-14
        );
        // d/dx1 of tanh(x1)/x1
        let e = parse("tanh(x1)/x1");
        let t = 0.3f64.tanh();
        let expect = ((1.0 - t * t) * 0.3 - t) / (0.3 * 0.3);
        assert_relative_eq!(e.partial(&x, 0), expect, epsilon = 1e-13);
    }

    #[test]
    fn dual_derivatives_match_central_differences() {
        let exprs = [
            "x2 + 0.25*sin(0.1*x1*x2)",
            "-0.2*x2 - 1.9*sin(0.01*x1)",
            "x1 + 0.526*x2 - 0.05*x1*x2",
            "sqrt(x1^2 + 2) * cos(x2) + tan(0.3*x1)",
            "x1^3 / (1 + x2^2)",
        ];
        let points = [[0.7, -1.3, 0.0], [-2.1, 0.4, 0.0], [3.0, 2.0, 0.0]];
        let h = 1e-6;
        for src in exprs {
            let e = parse(src);
            for p in points {
                for j in 0..2 {
                    let mut hi = p;
                    let mut lo = p;
                    hi[j] += h;
                    lo[j] -= h;
                    let fd = (e.eval(&hi) - e.eval(&lo)) / (2.0 * h);
                    let ad = e.partial(&p, j);
                    assert_relative_eq!(ad, fd, epsilon = 1e-8, max_relative = 1e-6);
                }
            }
        }
    }

    #[test]
    fn abs_derivative_is_one_sided_at_zero() {
        let e = parse("abs(x1)");
        assert_eq!(e.partial(&[0.0, 0.0, 0.0], 0), 1.0);
        assert_eq!(e.partial(&[-0.5, 0.0, 0.0], 0), -1.0);
        assert_eq!(e.partial(&[0.5, 0.0, 0.0], 0), 1.0);
    }

    #[test]
    fn pow_with_variable_exponent_differentiates() {
        let e = parse("x1 ^ x2");
        let x = [2.0, 3.0, 0.0];
        // d/dx1 = x2 * x1^(x2-1); d/dx2 = x1^x2 ln x1
        assert_relative_eq!(e.partial(&x, 0), 12.0, epsilon = 1e-12);
        assert_relative_eq!(e.partial(&x, 1), 8.0 * 2.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn negative_literal_folds_into_constant() {
        assert_eq!(Expr::parse("-3", VARS).unwrap(), Expr::Const(-3.0));
        assert_eq!(
            Expr::parse("2 - -3", VARS).unwrap(),
            Expr::Binary(
                BinaryOp::Sub,
                Box::new(Expr::Const(2.0)),
                Box::new(Expr::Const(-3.0))
            )
        );
    }

    #[test]
    fn display_round_trips_to_identical_tree() {
        let names: Vec<String> = (0..3).map(|i| format!("v{i}")).collect();
        let name_refs: Vec<&str> = names.iter().map(|s| s.as_str()).collect();
        for src in [
            "v0 + v1 + v2",
            "v0 - (v1 - v2)",
            "v0 * (v1 + v2) ^ 2",
            "-v0 ^ 2",
            "(-v0) ^ 2",
            "sin(cos(v0 * v1)) / (1 + abs(v2))",
            "v0 / v1 / v2",
            "v0 ^ v1 ^ v2",
            "2 - -3 * v0",
            "-(v0 + v1)",
        ] {
            let ast = Expr::parse(src, &name_refs).unwrap();
            let printed = ast.to_string();
            let reparsed = Expr::parse(&printed, &name_refs)
                .unwrap_or_else(|e| panic!("printed form '{printed}' failed to parse: {e}"));
            assert_eq!(reparsed, ast, "round trip changed '{src}' via '{printed}'");
        }
    }
}
