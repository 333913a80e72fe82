//! Untyped syntax tree produced by the parser.

use crate::span::Span;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    EMul,
    EDiv,
    Pow,
    EPow,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::EMul => ".*",
            BinOp::EDiv => "./",
            BinOp::Pow => "^",
            BinOp::EPow => ".^",
        }
    }

    fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div | BinOp::EMul | BinOp::EDiv => 2,
            BinOp::Pow | BinOp::EPow => 4,
        }
    }
}

/// Built-in functions callable as `name(arg)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Func {
    Log,
    Exp,
    Sin,
    Cos,
    Tanh,
    Abs,
    Norm1,
    Norm2,
    Sum,
    Tr,
    Det,
    Inv,
    Vector,
}

impl Func {
    pub fn from_name(name: &str) -> Option<Func> {
        Some(match name {
            "log" => Func::Log,
            "exp" => Func::Exp,
            "sin" => Func::Sin,
            "cos" => Func::Cos,
            "tanh" => Func::Tanh,
            "abs" => Func::Abs,
            "norm1" => Func::Norm1,
            "norm2" => Func::Norm2,
            "sum" => Func::Sum,
            "tr" => Func::Tr,
            "det" => Func::Det,
            "inv" => Func::Inv,
            "vector" => Func::Vector,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Func::Log => "log",
            Func::Exp => "exp",
            Func::Sin => "sin",
            Func::Cos => "cos",
            Func::Tanh => "tanh",
            Func::Abs => "abs",
            Func::Norm1 => "norm1",
            Func::Norm2 => "norm2",
            Func::Sum => "sum",
            Func::Tr => "tr",
            Func::Det => "det",
            Func::Inv => "inv",
            Func::Vector => "vector",
        }
    }
}

#[derive(Debug, Clone)]
pub enum AstKind {
    Number(f64),
    Name(String),
    Neg(Box<Ast>),
    Transpose(Box<Ast>),
    Binary(BinOp, Box<Ast>, Box<Ast>),
    Call(Func, Box<Ast>),
}

/// An expression as written in the model, with its source span.
#[derive(Debug, Clone)]
pub struct Ast {
    pub kind: AstKind,
    pub span: Span,
}

/// Structural equality; spans are ignored.
impl PartialEq for Ast {
    fn eq(&self, other: &Self) -> bool {
        match (&self.kind, &other.kind) {
            (AstKind::Number(a), AstKind::Number(b)) => a.to_bits() == b.to_bits(),
            (AstKind::Name(a), AstKind::Name(b)) => a == b,
            (AstKind::Neg(a), AstKind::Neg(b)) => a == b,
            (AstKind::Transpose(a), AstKind::Transpose(b)) => a == b,
            (AstKind::Binary(o1, l1, r1), AstKind::Binary(o2, l2, r2)) => o1 == o2 && l1 == l2 && r1 == r2,
            (AstKind::Call(f1, a1), AstKind::Call(f2, a2)) => f1 == f2 && a1 == a2,
            _ => false,
        }
    }
}

impl Ast {
    pub fn new(kind: AstKind, span: Span) -> Self {
        Ast { kind, span }
    }

    pub fn number(v: f64, span: Span) -> Self {
        Ast::new(AstKind::Number(v), span)
    }

    pub fn name(n: impl Into<String>, span: Span) -> Self {
        Ast::new(AstKind::Name(n.into()), span)
    }

    pub fn binary(op: BinOp, l: Ast, r: Ast) -> Self {
        let span = l.span.join(r.span);
        Ast::new(AstKind::Binary(op, Box::new(l), Box::new(r)), span)
    }

    pub fn neg(e: Ast) -> Self {
        let span = e.span;
        Ast::new(AstKind::Neg(Box::new(e)), span)
    }

    pub fn call(f: Func, arg: Ast) -> Self {
        let span = arg.span;
        Ast::new(AstKind::Call(f, Box::new(arg)), span)
    }

    /// Visit every node in pre-order.
    pub fn walk<'a>(&'a self, f: &mut impl FnMut(&'a Ast)) {
        f(self);
        match &self.kind {
            AstKind::Number(_) | AstKind::Name(_) => {}
            AstKind::Neg(e) | AstKind::Transpose(e) | AstKind::Call(_, e) => e.walk(f),
            AstKind::Binary(_, l, r) => {
                l.walk(f);
                r.walk(f);
            }
        }
    }

    /// Names referenced anywhere below this node.
    pub fn names(&self) -> Vec<&str> {
        let mut out = Vec::new();
        self.walk(&mut |a| {
            if let AstKind::Name(n) = &a.kind {
                if !out.contains(&n.as_str()) {
                    out.push(n.as_str());
                }
            }
        });
        out
    }

    fn precedence(&self) -> u8 {
        match &self.kind {
            AstKind::Number(_) | AstKind::Name(_) | AstKind::Call(..) => 6,
            AstKind::Transpose(_) => 5,
            AstKind::Binary(op, ..) => op.precedence(),
            AstKind::Neg(_) => 3,
        }
    }
}

fn write_wrapped(f: &mut fmt::Formatter<'_>, e: &Ast, paren: bool) -> fmt::Result {
    if paren {
        write!(f, "({e})")
    } else {
        write!(f, "{e}")
    }
}

/// Prints with the minimal parentheses needed to reparse to the same tree.
impl fmt::Display for Ast {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            AstKind::Number(v) => write!(f, "{v}"),
            AstKind::Name(n) => f.write_str(n),
            AstKind::Neg(e) => {
                f.write_str("-")?;
                write_wrapped(f, e, e.precedence() < 3)
            }
            AstKind::Transpose(e) => {
                write_wrapped(f, e, e.precedence() < 5)?;
                f.write_str("'")
            }
            AstKind::Call(func, arg) => write!(f, "{}({arg})", func.name()),
            AstKind::Binary(op, l, r) if matches!(op, BinOp::Pow | BinOp::EPow) => {
                let base_paren = l.precedence() < 4;
                write_wrapped(f, l, base_paren)?;
                write!(f, " {} ", op.symbol())?;
                let exp_ok = match &r.kind {
                    AstKind::Neg(inner) => inner.precedence() >= 5,
                    _ => r.precedence() >= 5,
                };
                write_wrapped(f, r, !exp_ok)
            }
            AstKind::Binary(op, l, r) => {
                let p = op.precedence();
                write_wrapped(f, l, l.precedence() < p)?;
                write!(f, " {} ", op.symbol())?;
                write_wrapped(f, r, r.precedence() <= p)
            }
        }
    }
}
