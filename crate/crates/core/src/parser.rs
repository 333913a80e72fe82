//! Recursive-descent parser for the four-block modeling language:
//!
//! ```text
//! parameters
//!     Matrix A
//!     Vector b
//! variables
//!     Vector x
//! min
//!     norm1(x)
//! st
//!     A*x == b
//!     x >= 0
//! ```
//!
//! Blocks appear in the order `parameters`, `variables`, `min`/`max`, `st`;
//! the parameter and constraint blocks are optional. Precedence from loosest
//! to tightest: `+ -`, then `* / .* ./`, then unary minus, then `^ .^`, then
//! postfix `'`. Relations do not chain.

use crate::ast::{Ast, AstKind, BinOp, Func};
use crate::error::ModelError;
use crate::lexer::{tokenize, tokenize_bytes, Token, TokenKind};
use crate::shape::Kind;
use crate::span::Span;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize)]
pub enum Sense {
    Min,
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Relation {
    Eq,
    Le,
    Ge,
}

impl Relation {
    pub fn symbol(self) -> &'static str {
        match self {
            Relation::Eq => "==",
            Relation::Le => "<=",
            Relation::Ge => ">=",
        }
    }
}

/// A declared parameter or variable.
#[derive(Debug, Clone)]
pub struct Decl {
    pub name: String,
    pub kind: Kind,
    pub symmetric: bool,
    pub span: Span,
    /// For epigraph variables introduced by reformulation: the expression
    /// whose absolute value the variable bounds.
    pub epigraph_of: Option<Ast>,
}

impl PartialEq for Decl {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.kind == other.kind
            && self.symmetric == other.symmetric
            && self.epigraph_of == other.epigraph_of
    }
}

impl Decl {
    pub fn is_auxiliary(&self) -> bool {
        self.epigraph_of.is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub sense: Sense,
    pub expr: Ast,
}

#[derive(Debug, Clone)]
pub struct Constraint {
    pub lhs: Ast,
    pub relation: Relation,
    pub rhs: Ast,
    pub span: Span,
    /// Index of the user-written constraint this row came from; `None` for
    /// rows added by reformulation.
    pub origin: Option<usize>,
}

impl PartialEq for Constraint {
    fn eq(&self, other: &Self) -> bool {
        self.lhs == other.lhs && self.relation == other.relation && self.rhs == other.rhs && self.origin == other.origin
    }
}

/// A parsed model.
#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub parameters: Vec<Decl>,
    pub variables: Vec<Decl>,
    pub objective: Objective,
    pub constraints: Vec<Constraint>,
}

impl ProblemSpec {
    pub fn parameter(&self, name: &str) -> Option<&Decl> {
        self.parameters.iter().find(|d| d.name == name)
    }

    pub fn variable(&self, name: &str) -> Option<&Decl> {
        self.variables.iter().find(|d| d.name == name)
    }
}

impl fmt::Display for ProblemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let decl = |f: &mut fmt::Formatter<'_>, d: &Decl| {
            write!(f, "  {} {}", d.kind, d.name)?;
            if d.symmetric {
                f.write_str(" symmetric")?;
            }
            writeln!(f)
        };
        if !self.parameters.is_empty() {
            writeln!(f, "parameters")?;
            for d in &self.parameters {
                decl(f, d)?;
            }
        }
        writeln!(f, "variables")?;
        for d in &self.variables {
            decl(f, d)?;
        }
        let sense = match self.objective.sense {
            Sense::Min => "min",
            Sense::Max => "max",
        };
        writeln!(f, "{sense}")?;
        writeln!(f, "  {}", self.objective.expr)?;
        if !self.constraints.is_empty() {
            writeln!(f, "st")?;
            for c in &self.constraints {
                writeln!(f, "  {} {} {}", c.lhs, c.relation.symbol(), c.rhs)?;
            }
        }
        Ok(())
    }
}

/// Tokenize and parse model text.
pub fn parse_model(text: &str) -> Result<ProblemSpec, ModelError> {
    let tokens = tokenize(text)?;
    parse(&tokens, text.len())
}

/// Parse arbitrary bytes; invalid UTF-8 is reported as a lex error.
pub fn parse_model_bytes(bytes: &[u8]) -> Result<ProblemSpec, ModelError> {
    let tokens = tokenize_bytes(bytes)?;
    parse(&tokens, bytes.len())
}

/// Parse a token stream. `source_len` is used to place end-of-input errors.
pub fn parse(tokens: &[Token], source_len: usize) -> Result<ProblemSpec, ModelError> {
    let eof = tokens.last().map_or(
        Span {
            start: source_len,
            end: source_len,
            line: 1,
            col: 1,
        },
        |t| Span {
            start: t.span.end,
            end: t.span.end,
            line: t.span.line,
            col: t.span.col + (t.span.end - t.span.start) as u32,
        },
    );
    let mut p = Parser { tokens, pos: 0, eof };
    p.model()
}

struct Parser<'t> {
    tokens: &'t [Token],
    pos: usize,
    eof: Span,
}

impl<'t> Parser<'t> {
    fn peek(&self) -> Option<&'t TokenKind> {
        self.tokens.get(self.pos).map(|t| &t.kind)
    }

    fn span(&self) -> Span {
        self.tokens.get(self.pos).map_or(self.eof, |t| t.span)
    }

    fn prev_span(&self) -> Span {
        if self.pos == 0 {
            self.span()
        } else {
            self.tokens[self.pos - 1].span
        }
    }

    fn advance(&mut self) -> Option<&'t Token> {
        let t = self.tokens.get(self.pos);
        if t.is_some() {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.peek() == Some(kind) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn error(&self, message: &str, expected: &[&str]) -> ModelError {
        let found = match self.peek() {
            Some(k) => format!("unexpected {k}"),
            None => "unexpected end of input".to_string(),
        };
        let message = if message.is_empty() {
            found
        } else {
            format!("{message}: {found}")
        };
        ModelError::Parse {
            message,
            expected: expected.iter().map(|s| s.to_string()).collect(),
            span: self.span(),
        }
    }

    fn model(&mut self) -> Result<ProblemSpec, ModelError> {
        let mut parameters = Vec::new();
        if self.eat(&TokenKind::Parameters) {
            parameters = self.decls()?;
        }
        if !self.eat(&TokenKind::Variables) {
            let expected: &[&str] = if parameters.is_empty() {
                &["parameters", "variables"]
            } else {
                &["a declaration", "variables"]
            };
            return Err(self.error("", expected));
        }
        let variables = self.decls()?;
        if variables.is_empty() {
            return Err(self.error("at least one variable must be declared", &["Matrix", "Vector", "Scalar"]));
        }
        check_unique(&parameters, &variables)?;

        let sense = match self.peek() {
            Some(TokenKind::Min) => Sense::Min,
            Some(TokenKind::Max) => Sense::Max,
            None => return Err(ModelError::MissingObjective { span: self.span() }),
            Some(_) => return Err(self.error("", &["a declaration", "min", "max"])),
        };
        self.advance();
        let expr = self.expr()?;
        let objective = Objective { sense, expr };

        let mut constraints = Vec::new();
        if self.eat(&TokenKind::St) {
            while self.peek().is_some() {
                let c = self.constraint(constraints.len())?;
                constraints.push(c);
            }
        }
        if self.peek().is_some() {
            let expected: &[&str] = if constraints.is_empty() {
                &["an operator", "st"]
            } else {
                &["an operator", "a relation"]
            };
            return Err(self.error("", expected));
        }
        Ok(ProblemSpec {
            parameters,
            variables,
            objective,
            constraints,
        })
    }

    fn decls(&mut self) -> Result<Vec<Decl>, ModelError> {
        let mut out = Vec::new();
        loop {
            let kind = match self.peek() {
                Some(TokenKind::MatrixKw) => Kind::Matrix,
                Some(TokenKind::VectorKw) => Kind::Vector,
                Some(TokenKind::ScalarKw) => Kind::Scalar,
                _ => return Ok(out),
            };
            let start = self.span();
            self.advance();
            let name = match self.peek() {
                Some(TokenKind::Ident(n)) => n.clone(),
                _ => return Err(self.error("", &["a name"])),
            };
            if Func::from_name(&name).is_some() {
                return Err(ModelError::Parse {
                    message: format!("`{name}` is a built-in function and cannot be declared"),
                    expected: vec![],
                    span: self.span(),
                });
            }
            let name_span = self.span();
            self.advance();
            let symmetric = self.eat(&TokenKind::Symmetric);
            if symmetric && kind != Kind::Matrix {
                return Err(ModelError::Parse {
                    message: "only matrices can be symmetric".into(),
                    expected: vec![],
                    span: self.prev_span(),
                });
            }
            out.push(Decl {
                name,
                kind,
                symmetric,
                span: start.join(name_span),
                epigraph_of: None,
            });
        }
    }

    fn constraint(&mut self, index: usize) -> Result<Constraint, ModelError> {
        let lhs = self.expr()?;
        let relation = match self.peek() {
            Some(TokenKind::EqEq) => Relation::Eq,
            // Strict inequalities are read as their closed counterparts.
            Some(TokenKind::Le) | Some(TokenKind::Lt) => Relation::Le,
            Some(TokenKind::Ge) | Some(TokenKind::Gt) => Relation::Ge,
            _ => return Err(self.error("", &["an operator", "==", "<=", ">="])),
        };
        self.advance();
        let rhs = self.expr()?;
        if matches!(
            self.peek(),
            Some(TokenKind::EqEq | TokenKind::Le | TokenKind::Lt | TokenKind::Ge | TokenKind::Gt)
        ) {
            return Err(self.error("chained relations are not supported; write two constraints", &[]));
        }
        let span = lhs.span.join(rhs.span);
        Ok(Constraint {
            lhs,
            relation,
            rhs,
            span,
            origin: Some(index),
        })
    }

    fn expr(&mut self) -> Result<Ast, ModelError> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(TokenKind::Plus) => BinOp::Add,
                Some(TokenKind::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.term()?;
            lhs = Ast::binary(op, lhs, rhs);
        }
    }

    fn term(&mut self) -> Result<Ast, ModelError> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(TokenKind::Star) => BinOp::Mul,
                Some(TokenKind::Slash) => BinOp::Div,
                Some(TokenKind::DotStar) => BinOp::EMul,
                Some(TokenKind::DotSlash) => BinOp::EDiv,
                _ => return Ok(lhs),
            };
            self.advance();
            let rhs = self.unary()?;
            lhs = Ast::binary(op, lhs, rhs);
        }
    }

    fn unary(&mut self) -> Result<Ast, ModelError> {
        if self.peek() == Some(&TokenKind::Minus) {
            let start = self.span();
            self.advance();
            let inner = self.unary()?;
            let span = start.join(inner.span);
            return Ok(Ast::new(AstKind::Neg(Box::new(inner)), span));
        }
        if self.peek() == Some(&TokenKind::Plus) {
            self.advance();
            return self.unary();
        }
        self.power()
    }

    fn power(&mut self) -> Result<Ast, ModelError> {
        let mut base = self.postfix()?;
        loop {
            let op = match self.peek() {
                Some(TokenKind::Caret) => BinOp::Pow,
                Some(TokenKind::DotCaret) => BinOp::EPow,
                _ => return Ok(base),
            };
            self.advance();
            let exponent = self.exponent()?;
            base = Ast::binary(op, base, exponent);
        }
    }

    fn exponent(&mut self) -> Result<Ast, ModelError> {
        if self.peek() == Some(&TokenKind::Minus) {
            let start = self.span();
            self.advance();
            let inner = self.exponent()?;
            let span = start.join(inner.span);
            return Ok(Ast::new(AstKind::Neg(Box::new(inner)), span));
        }
        self.postfix()
    }

    fn postfix(&mut self) -> Result<Ast, ModelError> {
        let mut e = self.primary()?;
        while self.peek() == Some(&TokenKind::Transpose) {
            let span = e.span.join(self.span());
            self.advance();
            e = Ast::new(AstKind::Transpose(Box::new(e)), span);
        }
        Ok(e)
    }

    fn primary(&mut self) -> Result<Ast, ModelError> {
        let span = self.span();
        match self.peek() {
            Some(TokenKind::Number(v)) => {
                self.advance();
                Ok(Ast::number(*v, span))
            }
            Some(TokenKind::Ident(name)) => {
                self.advance();
                if self.peek() == Some(&TokenKind::LParen) {
                    let Some(func) = Func::from_name(name) else {
                        return Err(ModelError::UnknownName {
                            name: name.clone(),
                            span,
                        });
                    };
                    self.advance();
                    let arg = self.expr()?;
                    if self.peek() == Some(&TokenKind::Comma) {
                        return Err(self.error(&format!("`{name}` takes one argument"), &[")"]));
                    }
                    if !self.eat(&TokenKind::RParen) {
                        return Err(self.error("", &["an operator", ")"]));
                    }
                    let span = span.join(self.prev_span());
                    Ok(Ast::new(AstKind::Call(func, Box::new(arg)), span))
                } else if Func::from_name(name).is_some() {
                    Err(self.error(&format!("`{name}` must be called"), &["("]))
                } else {
                    Ok(Ast::name(name.clone(), span))
                }
            }
            Some(TokenKind::LParen) => {
                self.advance();
                let inner = self.expr()?;
                if !self.eat(&TokenKind::RParen) {
                    return Err(self.error("", &["an operator", ")"]));
                }
                let mut inner = inner;
                inner.span = span.join(self.prev_span());
                Ok(inner)
            }
            _ => Err(self.error("", &["a number", "a name", "("])),
        }
    }
}

fn check_unique(parameters: &[Decl], variables: &[Decl]) -> Result<(), ModelError> {
    let all: Vec<&Decl> = parameters.iter().chain(variables.iter()).collect();
    for (i, d) in all.iter().enumerate() {
        if let Some(first) = all[..i].iter().find(|p| p.name == d.name) {
            return Err(ModelError::DuplicateName {
                name: d.name.clone(),
                span: d.span,
                first: first.span,
            });
        }
    }
    Ok(())
}
