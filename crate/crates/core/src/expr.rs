//! A small arithmetic expression language for kernel, weight and function specs.
//!
//! Grammar (lowest to highest precedence):
//!
//! ```text
//! cmp    := sum (("<" | "<=" | ">" | ">=" | "==" | "!=") sum)?
//! sum    := term (("+" | "-") term)*
//! term   := unary (("*" | "/") unary)*
//! unary  := "-" unary | power
//! power  := atom ("^" unary)?
//! atom   := number | name | name "(" args ")" | "(" cmp ")"
//! ```
//!
//! Comparisons evaluate to 1 or 0. Names resolve to the variables declared
//! when compiling, then to the constants `pi` and `e`.

use crate::error::{Error, Result};
use crate::scalar::{lit, Real};

#[derive(Debug, Clone, Copy, PartialEq)]
enum Func {
    Sin,
    Cos,
    Tan,
    Exp,
    Ln,
    Sqrt,
    Abs,
    Floor,
    Ceil,
    Sign,
    Min,
    Max,
    Pow,
}

impl Func {
    fn lookup(name: &str) -> Option<(Self, usize)> {
        Some(match name {
            "sin" => (Self::Sin, 1),
            "cos" => (Self::Cos, 1),
            "tan" => (Self::Tan, 1),
            "exp" => (Self::Exp, 1),
            "ln" | "log" => (Self::Ln, 1),
            "sqrt" => (Self::Sqrt, 1),
            "abs" => (Self::Abs, 1),
            "floor" => (Self::Floor, 1),
            "ceil" => (Self::Ceil, 1),
            "sign" => (Self::Sign, 1),
            "min" => (Self::Min, 2),
            "max" => (Self::Max, 2),
            "pow" => (Self::Pow, 2),
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Cmp {
    Lt,
    Le,
    Gt,
    Ge,
    Eq,
    Ne,
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Num(f64),
    Var(usize),
    Neg(Box<Node>),
    Add(Box<Node>, Box<Node>),
    Sub(Box<Node>, Box<Node>),
    Mul(Box<Node>, Box<Node>),
    Div(Box<Node>, Box<Node>),
    Pow(Box<Node>, Box<Node>),
    Cmp(Cmp, Box<Node>, Box<Node>),
    Call(Func, Vec<Node>),
}

/// A compiled expression over a fixed list of variable names.
#[derive(Debug, Clone, PartialEq)]
pub struct Expr {
    source: String,
    vars: Vec<String>,
    root: Node,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Ident(String),
    Op(&'static str),
    LParen,
    RParen,
    Comma,
}

fn tokenize(src: &str) -> Result<Vec<Tok>> {
    let b = src.as_bytes();
    let mut i = 0;
    let mut out = Vec::new();
    while i < b.len() {
        let c = b[i] as char;
        if c.is_ascii_whitespace() {
            i += 1;
        } else if c.is_ascii_digit() || c == '.' {
            let start = i;
            while i < b.len() && ((b[i] as char).is_ascii_digit() || b[i] == b'.') {
                i += 1;
            }
            if i < b.len() && (b[i] == b'e' || b[i] == b'E') {
                let save = i;
                i += 1;
                if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
                    i += 1;
                }
                if i < b.len() && (b[i] as char).is_ascii_digit() {
                    while i < b.len() && (b[i] as char).is_ascii_digit() {
                        i += 1;
                    }
                } else {
                    i = save;
                }
            }
            let text = &src[start..i];
            let v: f64 = text
                .parse()
                .map_err(|_| Error::Parse(format!("bad number '{text}' in '{src}'")))?;
            out.push(Tok::Num(v));
        } else if c.is_ascii_alphabetic() || c == '_' {
            let start = i;
            while i < b.len() && ((b[i] as char).is_ascii_alphanumeric() || b[i] == b'_') {
                i += 1;
            }
            out.push(Tok::Ident(src[start..i].to_string()));
        } else {
            let two = if i + 1 < b.len() { &src[i..i + 2] } else { "" };
            let op: Option<&'static str> = match two {
                "<=" => Some("<="),
                ">=" => Some(">="),
                "==" => Some("=="),
                "!=" => Some("!="),
                "**" => Some("^"),
                _ => None,
            };
            if let Some(op) = op {
                out.push(Tok::Op(op));
                i += 2;
                continue;
            }
            out.push(match c {
                '+' => Tok::Op("+"),
                '-' => Tok::Op("-"),
                '*' => Tok::Op("*"),
                '/' => Tok::Op("/"),
                '^' => Tok::Op("^"),
                '<' => Tok::Op("<"),
                '>' => Tok::Op(">"),
                '(' => Tok::LParen,
                ')' => Tok::RParen,
                ',' => Tok::Comma,
                _ => return Err(Error::Parse(format!("unexpected '{c}' in '{src}'"))),
            });
            i += 1;
        }
    }
    Ok(out)
}

struct Parser<'a> {
    toks: Vec<Tok>,
    pos: usize,
    vars: &'a [String],
    src: &'a str,
}

impl Parser<'_> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos)
    }

    fn err<T>(&self, msg: &str) -> Result<T> {
        Err(Error::Parse(format!("{msg} in '{}'", self.src)))
    }

    fn eat_op(&mut self, ops: &[&str]) -> Option<&'static str> {
        if let Some(Tok::Op(o)) = self.peek() {
            if ops.contains(o) {
                let o = *o;
                self.pos += 1;
                return Some(o);
            }
        }
        None
    }

    fn cmp(&mut self) -> Result<Node> {
        let lhs = self.sum()?;
        let op = match self.eat_op(&["<", "<=", ">", ">=", "==", "!="]) {
            None => return Ok(lhs),
            Some(o) => o,
        };
        let rhs = self.sum()?;
        let c = match op {
            "<" => Cmp::Lt,
            "<=" => Cmp::Le,
            ">" => Cmp::Gt,
            ">=" => Cmp::Ge,
            "==" => Cmp::Eq,
            _ => Cmp::Ne,
        };
        Ok(Node::Cmp(c, Box::new(lhs), Box::new(rhs)))
    }

    fn sum(&mut self) -> Result<Node> {
        let mut lhs = self.term()?;
        while let Some(op) = self.eat_op(&["+", "-"]) {
            let rhs = self.term()?;
            lhs = if op == "+" {
                Node::Add(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Sub(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn term(&mut self) -> Result<Node> {
        let mut lhs = self.unary()?;
        while let Some(op) = self.eat_op(&["*", "/"]) {
            let rhs = self.unary()?;
            lhs = if op == "*" {
                Node::Mul(Box::new(lhs), Box::new(rhs))
            } else {
                Node::Div(Box::new(lhs), Box::new(rhs))
            };
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Node> {
        if self.eat_op(&["-"]).is_some() {
            return Ok(Node::Neg(Box::new(self.unary()?)));
        }
        if self.eat_op(&["+"]).is_some() {
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Node> {
        let base = self.atom()?;
        if self.eat_op(&["^"]).is_some() {
            let exp = self.unary()?;
            return Ok(Node::Pow(Box::new(base), Box::new(exp)));
        }
        Ok(base)
    }

    fn atom(&mut self) -> Result<Node> {
        let tok = match self.peek() {
            None => return self.err("unexpected end of expression"),
            Some(t) => t.clone(),
        };
        self.pos += 1;
        match tok {
            Tok::Num(v) => Ok(Node::Num(v)),
            Tok::LParen => {
                let inner = self.cmp()?;
                if self.peek() != Some(&Tok::RParen) {
                    return self.err("missing ')'");
                }
                self.pos += 1;
                Ok(inner)
            }
            Tok::Ident(name) => {
                if self.peek() == Some(&Tok::LParen) {
                    let (f, arity) = match Func::lookup(&name) {
                        Some(v) => v,
                        None => return self.err(&format!("unknown function '{name}'")),
                    };
                    self.pos += 1;
                    let mut args = vec![self.cmp()?];
                    while self.peek() == Some(&Tok::Comma) {
                        self.pos += 1;
                        args.push(self.cmp()?);
                    }
                    if self.peek() != Some(&Tok::RParen) {
                        return self.err("missing ')' after arguments");
                    }
                    self.pos += 1;
                    if args.len() != arity {
                        return self.err(&format!(
                            "'{name}' takes {arity} argument(s), got {}",
                            args.len()
                        ));
                    }
                    return Ok(Node::Call(f, args));
                }
                if let Some(i) = self.vars.iter().position(|v| *v == name) {
                    return Ok(Node::Var(i));
                }
                match name.as_str() {
                    "pi" => Ok(Node::Num(std::f64::consts::PI)),
                    "e" => Ok(Node::Num(std::f64::consts::E)),
                    _ => self.err(&format!("unknown variable '{name}'")),
                }
            }
            _ => self.err("unexpected token"),
        }
    }
}

impl Expr {
    /// Compiles `src` with the given variable names (positional at evaluation).
    pub fn compile(src: &str, vars: &[&str]) -> Result<Self> {
        let vars: Vec<String> = vars.iter().map(|s| s.to_string()).collect();
        let toks = tokenize(src)?;
        let mut p = Parser {
            toks,
            pos: 0,
            vars: &vars,
            src,
        };
        let root = p.cmp()?;
        if p.pos != p.toks.len() {
            return p.err("trailing input");
        }
        Ok(Self {
            source: src.to_string(),
            vars,
            root,
        })
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn variables(&self) -> &[String] {
        &self.vars
    }

    /// Whether the expression reads variable `name`.
    pub fn uses(&self, name: &str) -> bool {
        fn walk(n: &Node, i: usize) -> bool {
            match n {
                Node::Num(_) => false,
                Node::Var(j) => *j == i,
                Node::Neg(a) => walk(a, i),
                Node::Add(a, b)
                | Node::Sub(a, b)
                | Node::Mul(a, b)
                | Node::Div(a, b)
                | Node::Pow(a, b)
                | Node::Cmp(_, a, b) => walk(a, i) || walk(b, i),
                Node::Call(_, args) => args.iter().any(|a| walk(a, i)),
            }
        }
        match self.vars.iter().position(|v| v == name) {
            Some(i) => walk(&self.root, i),
            None => false,
        }
    }

    /// Evaluates with `vals[i]` bound to the `i`-th declared variable.
    pub fn eval<T: Real>(&self, vals: &[T]) -> T {
        eval_node(&self.root, vals)
    }
}

fn eval_node<T: Real>(n: &Node, v: &[T]) -> T {
    match n {
        Node::Num(x) => lit(*x),
        Node::Var(i) => v[*i],
        Node::Neg(a) => -eval_node(a, v),
        Node::Add(a, b) => eval_node(a, v) + eval_node(b, v),
        Node::Sub(a, b) => eval_node(a, v) - eval_node(b, v),
        Node::Mul(a, b) => eval_node(a, v) * eval_node(b, v),
        Node::Div(a, b) => eval_node(a, v) / eval_node(b, v),
        Node::Pow(a, b) => {
            let base = eval_node(a, v);
            match **b {
                Node::Num(e) if e == e.trunc() && e.abs() <= 64.0 => base.powi(e as i32),
                _ => base.powf(eval_node(b, v)),
            }
        }
        Node::Cmp(c, a, b) => {
            let (x, y) = (eval_node(a, v), eval_node(b, v));
            let t = match c {
                Cmp::Lt => x < y,
                Cmp::Le => x <= y,
                Cmp::Gt => x > y,
                Cmp::Ge => x >= y,
                Cmp::Eq => x == y,
                Cmp::Ne => x != y,
            };
            if t {
                T::one()
            } else {
                T::zero()
            }
        }
        Node::Call(f, args) => {
            let a = eval_node(&args[0], v);
            match f {
                Func::Sin => a.sin(),
                Func::Cos => a.cos(),
                Func::Tan => a.tan(),
                Func::Exp => a.exp(),
                Func::Ln => a.ln(),
                Func::Sqrt => a.sqrt(),
                Func::Abs => a.abs(),
                Func::Floor => a.floor(),
                Func::Ceil => a.ceil(),
                Func::Sign => {
                    if a > T::zero() {
                        T::one()
                    } else if a < T::zero() {
                        -T::one()
                    } else {
                        T::zero()
                    }
                }
                Func::Min => a.min(eval_node(&args[1], v)),
                Func::Max => a.max(eval_node(&args[1], v)),
                Func::Pow => a.powf(eval_node(&args[1], v)),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(src: &str, vars: &[&str], vals: &[f64]) -> f64 {
        Expr::compile(src, vars).unwrap().eval(vals)
    }

    #[test]
    fn precedence_and_associativity() {
        assert_eq!(ev("1 + 2 * 3", &[], &[]), 7.0);
        assert_eq!(ev("2 ^ 3 ^ 2", &[], &[]), 512.0);
        assert_eq!(ev("-2 ^ 2", &[], &[]), -4.0);
        assert_eq!(ev("(1 + 2) * 3", &[], &[]), 9.0);
        assert_eq!(ev("8 / 2 / 2", &[], &[]), 2.0);
        assert_eq!(ev("2 ** 3", &[], &[]), 8.0);
        assert_eq!(ev("1.5e1 - 5", &[], &[]), 10.0);
    }

    #[test]
    fn variables_functions_and_comparisons() {
        assert_eq!(ev("2 + cos(x)", &["x"], &[0.0]), 3.0);
        assert_eq!(ev("k * (r < 1)", &["r", "k"], &[0.5, 7.0]), 7.0);
        assert_eq!(ev("k * (r < 1)", &["r", "k"], &[1.5, 7.0]), 0.0);
        assert_eq!(ev("max(x, y) - min(x, y)", &["x", "y"], &[2.0, 5.0]), 3.0);
        assert!(
            (ev("(1 - s) / r ^ (1 - 2 * (1 - s))", &["r", "s"], &[2.0, 0.5]) - 0.5).abs() < 1e-15
        );
        assert!((ev("pi", &[], &[]) - std::f64::consts::PI).abs() < 1e-15);
    }

    #[test]
    fn errors_are_reported() {
        assert!(Expr::compile("1 +", &[]).is_err());
        assert!(Expr::compile("foo(1)", &[]).is_err());
        assert!(Expr::compile("y", &["x"]).is_err());
        assert!(Expr::compile("min(1)", &[]).is_err());
        assert!(Expr::compile("(1", &[]).is_err());
        assert!(Expr::compile("1 2", &[]).is_err());
    }

    #[test]
    fn variable_usage() {
        let e = Expr::compile("x1 * 2", &["x1", "x2"]).unwrap();
        assert!(e.uses("x1"));
        assert!(!e.uses("x2"));
    }
}
