//! A small arithmetic expression language for coefficient functions.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! expr  := term (('+' | '-') term)*
//! term  := unary (('*' | '/') unary)*
//! unary := ('-' | '+') unary | power
//! power := atom ('^' unary)?            right associative
//! atom  := number | name | func '(' expr (',' expr)* ')' | '(' expr ')'
//! ```
//!
//! Names are the declared variables (e.g. `x1`, `u1`) plus the constants `pi`
//! and `e`. Functions: `sin cos exp ln sqrt abs` (one argument) and `min max`
//! (two arguments).

use std::fmt;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse error at position {pos} in `{source_text}`: {message}")]
pub struct ParseError {
    pub pos: usize,
    pub message: String,
    pub source_text: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("domain error in {func} at {point}: argument {arg}")]
    Domain {
        func: &'static str,
        arg: f64,
        point: String,
    },
    #[error("non-finite result {value} at {point}")]
    NonFinite { value: f64, point: String },
    #[error("expected {expected} variable values, got {got}")]
    Arity { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func1 {
    Sin,
    Cos,
    Exp,
    Ln,
    Sqrt,
    Abs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Func2 {
    Min,
    Max,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Const(f64),
    Var(usize),
    Neg(Box<Node>),
    Bin(BinOp, Box<Node>, Box<Node>),
    Call1(Func1, Box<Node>),
    Call2(Func2, Box<Node>, Box<Node>),
}

/// A parsed coefficient expression bound to an ordered list of variable names.
///
/// Expressions are immutable after parsing and can be shared across threads.
#[derive(Clone, PartialEq)]
pub struct Expr {
    root: Node,
    vars: Vec<String>,
    source: String,
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

impl Serialize for Expr {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.source)
    }
}

impl Expr {
    /// Parses `text` against the ordered variable names `vars`.
    pub fn parse<S: AsRef<str>>(text: &str, vars: &[S]) -> Result<Expr, ParseError> {
        let vars: Vec<String> = vars.iter().map(|v| v.as_ref().to_string()).collect();
        let tokens = tokenize(text)?;
        let mut p = Parser {
            tokens,
            idx: 0,
            vars: &vars,
            text,
        };
        let root = p.expr()?;
        if let Some(tok) = p.peek() {
            return Err(p.error(tok.pos, format!("unexpected `{}`", tok.kind)));
        }
        Ok(Expr {
            root,
            vars,
            source: text.to_string(),
        })
    }

    /// Constant expression, used by built-in families.
    pub fn constant(value: f64, vars: &[String]) -> Expr {
        Expr {
            root: Node::Const(value),
            vars: vars.to_vec(),
            source: format!("{value:?}"),
        }
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn vars(&self) -> &[String] {
        &self.vars
    }

    /// True when the variable at `index` appears syntactically.
    pub fn depends_on(&self, index: usize) -> bool {
        fn walk(n: &Node, i: usize) -> bool {
            match n {
                Node::Const(_) => false,
                Node::Var(j) => *j == i,
                Node::Neg(a) | Node::Call1(_, a) => walk(a, i),
                Node::Bin(_, a, b) | Node::Call2(_, a, b) => walk(a, i) || walk(b, i),
            }
        }
        walk(&self.root, index)
    }

    /// Evaluates at the point `values` (ordered as the declared variables).
    pub fn eval(&self, values: &[f64]) -> Result<f64, EvalError> {
        if values.len() != self.vars.len() {
            return Err(EvalError::Arity {
                expected: self.vars.len(),
                got: values.len(),
            });
        }
        let v = self.eval_node(&self.root, values)?;
        if !v.is_finite() {
            return Err(EvalError::NonFinite {
                value: v,
                point: self.format_point(values),
            });
        }
        Ok(v)
    }

    fn format_point(&self, values: &[f64]) -> String {
        let parts: Vec<String> = self.vars.iter().zip(values).map(|(n, v)| format!("{n}={v}")).collect();
        format!("({})", parts.join(", "))
    }

    fn domain(&self, func: &'static str, arg: f64, values: &[f64]) -> EvalError {
        EvalError::Domain {
            func,
            arg,
            point: self.format_point(values),
        }
    }

    fn eval_node(&self, n: &Node, values: &[f64]) -> Result<f64, EvalError> {
        Ok(match n {
            Node::Const(c) => *c,
            Node::Var(i) => values[*i],
            Node::Neg(a) => -self.eval_node(a, values)?,
            Node::Bin(op, a, b) => {
                let x = self.eval_node(a, values)?;
                let y = self.eval_node(b, values)?;
                match op {
                    BinOp::Add => x + y,
                    BinOp::Sub => x - y,
                    BinOp::Mul => x * y,
                    BinOp::Div => {
                        if y == 0.0 {
                            return Err(self.domain("division", y, values));
                        }
                        x / y
                    }
                    BinOp::Pow => {
                        let r = if y.fract() == 0.0 && y.abs() < 64.0 {
                            x.powi(y as i32)
                        } else {
                            x.powf(y)
                        };
                        if r.is_nan() {
                            return Err(self.domain("pow", x, values));
                        }
                        r
                    }
                }
            }
            Node::Call1(f, a) => {
                let x = self.eval_node(a, values)?;
                match f {
                    Func1::Sin => x.sin(),
                    Func1::Cos => x.cos(),
                    Func1::Exp => x.exp(),
                    Func1::Abs => x.abs(),
                    Func1::Ln => {
                        if x <= 0.0 {
                            return Err(self.domain("ln", x, values));
                        }
                        x.ln()
                    }
                    Func1::Sqrt => {
                        if x < 0.0 {
                            return Err(self.domain("sqrt", x, values));
                        }
                        x.sqrt()
                    }
                }
            }
            Node::Call2(f, a, b) => {
                let x = self.eval_node(a, values)?;
                let y = self.eval_node(b, values)?;
                match f {
                    Func2::Min => x.min(y),
                    Func2::Max => x.max(y),
                }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum TokKind {
    Num(f64),
    Ident(String),
    Op(char),
}

impl fmt::Display for TokKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokKind::Num(v) => write!(f, "{v}"),
            TokKind::Ident(s) => f.write_str(s),
            TokKind::Op(c) => write!(f, "{c}"),
        }
    }
}

#[derive(Debug, Clone)]
struct Token {
    kind: TokKind,
    pos: usize,
}

fn tokenize(text: &str) -> Result<Vec<Token>, ParseError> {
    let bytes = text.as_bytes();
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
            let lit = &text[start..i];
            let v: f64 = lit.parse().map_err(|_| ParseError {
                pos: start,
                message: format!("malformed number `{lit}`"),
                source_text: text.to_string(),
            })?;
            out.push(Token {
                kind: TokKind::Num(v),
                pos: start,
            });
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
            out.push(Token {
                kind: TokKind::Ident(text[start..i].to_string()),
                pos: start,
            });
        } else if "+-*/^(),".contains(c) {
            out.push(Token {
                kind: TokKind::Op(c),
                pos: i,
            });
            i += 1;
        } else {
            return Err(ParseError {
                pos: i,
                message: format!("unexpected character `{c}`"),
                source_text: text.to_string(),
            });
        }
    }
    Ok(out)
}

struct Parser<'a> {
    tokens: Vec<Token>,
    idx: usize,
    vars: &'a [String],
    text: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Token> {
        self.tokens.get(self.idx)
    }

    fn end_pos(&self) -> usize {
        self.text.len()
    }

    fn error(&self, pos: usize, message: String) -> ParseError {
        ParseError {
            pos,
            message,
            source_text: self.text.to_string(),
        }
    }

    fn eat_op(&mut self, c: char) -> bool {
        if matches!(self.peek(), Some(Token { kind: TokKind::Op(o), .. }) if *o == c) {
            self.idx += 1;
            true
        } else {
            false
        }
    }

    fn expect_op(&mut self, c: char) -> Result<(), ParseError> {
        if self.eat_op(c) {
            return Ok(());
        }
        match self.peek() {
            Some(t) => Err(self.error(t.pos, format!("expected `{c}`, found `{}`", t.kind))),
            None => Err(self.error(self.end_pos(), format!("expected `{c}`, found end of input"))),
        }
    }

    fn expr(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.term()?;
        loop {
            if self.eat_op('+') {
                lhs = Node::Bin(BinOp::Add, Box::new(lhs), Box::new(self.term()?));
            } else if self.eat_op('-') {
                lhs = Node::Bin(BinOp::Sub, Box::new(lhs), Box::new(self.term()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn term(&mut self) -> Result<Node, ParseError> {
        let mut lhs = self.unary()?;
        loop {
            if self.eat_op('*') {
                lhs = Node::Bin(BinOp::Mul, Box::new(lhs), Box::new(self.unary()?));
            } else if self.eat_op('/') {
                lhs = Node::Bin(BinOp::Div, Box::new(lhs), Box::new(self.unary()?));
            } else {
                return Ok(lhs);
            }
        }
    }

    fn unary(&mut self) -> Result<Node, ParseError> {
        if self.eat_op('-') {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat_op('+') {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node, ParseError> {
        let base = self.atom()?;
        if self.eat_op('^') {
            let exp = self.unary()?;
            return Ok(Node::Bin(BinOp::Pow, Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node, ParseError> {
        let Some(tok) = self.peek().cloned() else {
            return Err(self.error(self.end_pos(), "unexpected end of input".into()));
        };
        self.idx += 1;
        match tok.kind {
            TokKind::Num(v) => Ok(Node::Const(v)),
            TokKind::Op('(') => {
                let inner = self.expr()?;
                self.expect_op(')')?;
                Ok(inner)
            }
            TokKind::Op(c) => Err(self.error(tok.pos, format!("unexpected `{c}`"))),
            TokKind::Ident(name) => {
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Node::Var(i));
                }
                let f1 = match name.as_str() {
                    "sin" => Some(Func1::Sin),
                    "cos" => Some(Func1::Cos),
                    "exp" => Some(Func1::Exp),
                    "ln" => Some(Func1::Ln),
                    "sqrt" => Some(Func1::Sqrt),
                    "abs" => Some(Func1::Abs),
                    _ => None,
                };
                if let Some(f) = f1 {
                    self.expect_op('(')?;
                    let a = self.expr()?;
                    self.expect_op(')')?;
                    return Ok(Node::Call1(f, Box::new(a)));
                }
                let f2 = match name.as_str() {
                    "min" => Some(Func2::Min),
                    "max" => Some(Func2::Max),
                    _ => None,
                };
                if let Some(f) = f2 {
                    self.expect_op('(')?;
                    let a = self.expr()?;
                    self.expect_op(',')?;
                    let b = self.expr()?;
                    self.expect_op(')')?;
                    return Ok(Node::Call2(f, Box::new(a), Box::new(b)));
                }
                match name.as_str() {
                    "pi" => Ok(Node::Const(std::f64::consts::PI)),
                    "e" => Ok(Node::Const(std::f64::consts::E)),
                    _ => Err(self.error(tok.pos, format!("unknown name `{name}`"))),
                }
            }
        }
    }
}

/// Variable names `x1..xd, u1..uL` in evaluation order.
pub fn state_action_vars(state_dim: usize, action_dim: usize) -> Vec<String> {
    (1..=state_dim)
        .map(|i| format!("x{i}"))
        .chain((1..=action_dim).map(|j| format!("u{j}")))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn xu() -> Vec<String> {
        state_action_vars(1, 1)
    }

    #[test]
    fn evaluates_examples() {
        let e = Expr::parse("sin(x1)*u1 + 0.5", &xu()).unwrap();
        assert_eq!(e.eval(&[0.0, 1.0]).unwrap(), 0.5);
        let e = Expr::parse("1 + x1^2", &["x1"]).unwrap();
        assert_eq!(e.eval(&[2.0]).unwrap(), 5.0);
    }

    #[test]
    fn exp_density_integrates_to_one() {
        let e = Expr::parse("exp(u1)/ (exp(1)-1)", &["u1"]).unwrap();
        // composite Simpson with 2000 panels; exact value is 1
        let n = 2000;
        let h = 1.0 / n as f64;
        let mut s = e.eval(&[0.0]).unwrap() + e.eval(&[1.0]).unwrap();
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            s += w * e.eval(&[i as f64 * h]).unwrap();
        }
        assert!((s * h / 3.0 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn precedence_and_associativity() {
        let v = ["x"];
        let ev = |s: &str, x: f64| Expr::parse(s, &v).unwrap().eval(&[x]).unwrap();
        assert_eq!(ev("-x^2", 3.0), -9.0);
        assert_eq!(ev("2^3^2", 0.0), 512.0);
        assert_eq!(ev("2^-1", 0.0), 0.5);
        assert_eq!(ev("1 - 2 - 3", 0.0), -4.0);
        assert_eq!(ev("8 / 4 / 2", 0.0), 1.0);
        assert_eq!(ev("max(x, 1) + min(x, 1)", 3.0), 4.0);
        assert_eq!(ev("abs(-x) * 2e-1", 5.0), 1.0);
        assert!((ev("cos(pi)", 0.0) + 1.0).abs() < 1e-15);
        assert!((ev("ln(e)", 0.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = Expr::parse("1 + * x1", &["x1"]).unwrap_err();
        assert_eq!(err.pos, 4);
        let err = Expr::parse("sin(x1", &["x1"]).unwrap_err();
        assert_eq!(err.pos, 6);
        let err = Expr::parse("y + 1", &["x1"]).unwrap_err();
        assert_eq!(err.pos, 0);
        let err = Expr::parse("1 $ 2", &["x1"]).unwrap_err();
        assert_eq!(err.pos, 2);
        assert!(Expr::parse("(1 + 2", &["x1"]).is_err());
        assert!(Expr::parse("1 2", &["x1"]).is_err());
    }

    #[test]
    fn domain_errors_report_point() {
        let e = Expr::parse("ln(x1)", &["x1"]).unwrap();
        match e.eval(&[-1.0]) {
            Err(EvalError::Domain { func, point, .. }) => {
                assert_eq!(func, "ln");
                assert!(point.contains("x1=-1"));
            }
            other => panic!("expected domain error, got {other:?}"),
        }
        let e = Expr::parse("sqrt(x1)", &["x1"]).unwrap();
        assert!(e.eval(&[-0.5]).is_err());
        let e = Expr::parse("1/x1", &["x1"]).unwrap();
        assert!(e.eval(&[0.0]).is_err());
        let e = Expr::parse("exp(x1)", &["x1"]).unwrap();
        assert!(matches!(e.eval(&[1e4]), Err(EvalError::NonFinite { .. })));
    }

    #[test]
    fn dependency_tracking() {
        let e = Expr::parse("sin(x1) + 2", &xu()).unwrap();
        assert!(e.depends_on(0));
        assert!(!e.depends_on(1));
    }
}
