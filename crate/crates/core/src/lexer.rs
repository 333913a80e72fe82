//! Tokenizer for the modeling language.
//!
//! The language is newline-insensitive; whitespace only separates tokens.
//! `#` starts a comment that runs to the end of the line.

use crate::error::ModelError;
use crate::span::Span;
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum TokenKind {
    // block keywords
    Parameters,
    Variables,
    Min,
    Max,
    St,
    // declaration keywords
    MatrixKw,
    VectorKw,
    ScalarKw,
    Symmetric,
    Ident(String),
    Number(f64),
    Plus,
    Minus,
    Star,
    Slash,
    DotStar,
    DotSlash,
    Caret,
    DotCaret,
    Transpose,
    LParen,
    RParen,
    Comma,
    EqEq,
    Le,
    Ge,
    Lt,
    Gt,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenKind::Parameters => f.write_str("parameters"),
            TokenKind::Variables => f.write_str("variables"),
            TokenKind::Min => f.write_str("min"),
            TokenKind::Max => f.write_str("max"),
            TokenKind::St => f.write_str("st"),
            TokenKind::MatrixKw => f.write_str("Matrix"),
            TokenKind::VectorKw => f.write_str("Vector"),
            TokenKind::ScalarKw => f.write_str("Scalar"),
            TokenKind::Symmetric => f.write_str("symmetric"),
            TokenKind::Ident(s) => write!(f, "identifier `{s}`"),
            TokenKind::Number(v) => write!(f, "number {v}"),
            TokenKind::Plus => f.write_str("+"),
            TokenKind::Minus => f.write_str("-"),
            TokenKind::Star => f.write_str("*"),
            TokenKind::Slash => f.write_str("/"),
            TokenKind::DotStar => f.write_str(".*"),
            TokenKind::DotSlash => f.write_str("./"),
            TokenKind::Caret => f.write_str("^"),
            TokenKind::DotCaret => f.write_str(".^"),
            TokenKind::Transpose => f.write_str("'"),
            TokenKind::LParen => f.write_str("("),
            TokenKind::RParen => f.write_str(")"),
            TokenKind::Comma => f.write_str(","),
            TokenKind::EqEq => f.write_str("=="),
            TokenKind::Le => f.write_str("<="),
            TokenKind::Ge => f.write_str(">="),
            TokenKind::Lt => f.write_str("<"),
            TokenKind::Gt => f.write_str(">"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}

struct Cursor<'a> {
    src: &'a str,
    pos: usize,
    line: u32,
    col: u32,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<char> {
        self.src[self.pos..].chars().next()
    }

    fn peek2(&self) -> Option<char> {
        let mut it = self.src[self.pos..].chars();
        it.next();
        it.next()
    }

    fn bump(&mut self) -> Option<char> {
        let c = self.peek()?;
        self.pos += c.len_utf8();
        if c == '\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        Some(c)
    }

    fn span_from(&self, start: usize, line: u32, col: u32) -> Span {
        Span {
            start,
            end: self.pos,
            line,
            col,
        }
    }
}

/// Split model text into tokens.
pub fn tokenize(text: &str) -> Result<Vec<Token>, ModelError> {
    let mut cur = Cursor {
        src: text,
        pos: 0,
        line: 1,
        col: 1,
    };
    let mut out: Vec<Token> = Vec::new();
    while let Some(c) = cur.peek() {
        if c.is_whitespace() {
            cur.bump();
            continue;
        }
        if c == '#' {
            while let Some(c) = cur.peek() {
                if c == '\n' {
                    break;
                }
                cur.bump();
            }
            continue;
        }
        let (start, line, col) = (cur.pos, cur.line, cur.col);
        let kind = if c.is_ascii_alphabetic() || c == '_' {
            while matches!(cur.peek(), Some(c) if c.is_ascii_alphanumeric() || c == '_') {
                cur.bump();
            }
            keyword_or_ident(&text[start..cur.pos])
        } else if c.is_ascii_digit() || (c == '.' && matches!(cur.peek2(), Some(d) if d.is_ascii_digit())) {
            lex_number(&mut cur)?
        } else {
            cur.bump();
            match c {
                '+' => TokenKind::Plus,
                '-' => TokenKind::Minus,
                '*' => TokenKind::Star,
                '/' => TokenKind::Slash,
                '^' => TokenKind::Caret,
                '\'' => TokenKind::Transpose,
                '(' => TokenKind::LParen,
                ')' => TokenKind::RParen,
                ',' => TokenKind::Comma,
                '.' => match cur.peek() {
                    Some('*') => {
                        cur.bump();
                        TokenKind::DotStar
                    }
                    Some('/') => {
                        cur.bump();
                        TokenKind::DotSlash
                    }
                    Some('^') => {
                        cur.bump();
                        TokenKind::DotCaret
                    }
                    _ => return Err(lex_error(&cur, start, line, col, "`.` must start `.*`, `./` or `.^`")),
                },
                '=' if cur.peek() == Some('=') => {
                    cur.bump();
                    TokenKind::EqEq
                }
                '<' if cur.peek() == Some('=') => {
                    cur.bump();
                    TokenKind::Le
                }
                '>' if cur.peek() == Some('=') => {
                    cur.bump();
                    TokenKind::Ge
                }
                '<' => TokenKind::Lt,
                '>' => TokenKind::Gt,
                '=' => return Err(lex_error(&cur, start, line, col, "single `=`; use `==` for equality")),
                other => {
                    return Err(lex_error(
                        &cur,
                        start,
                        line,
                        col,
                        &format!("illegal character {other:?}"),
                    ))
                }
            }
        };
        out.push(Token {
            kind,
            span: cur.span_from(start, line, col),
        });
    }
    Ok(out)
}

/// Tokenize raw bytes, rejecting invalid UTF-8 with a positioned error.
pub fn tokenize_bytes(bytes: &[u8]) -> Result<Vec<Token>, ModelError> {
    match std::str::from_utf8(bytes) {
        Ok(s) => tokenize(s),
        Err(e) => {
            let valid = e.valid_up_to();
            let prefix = std::str::from_utf8(&bytes[..valid]).unwrap_or("");
            let line = prefix.matches('\n').count() as u32 + 1;
            let col = prefix.rsplit('\n').next().map_or(0, |l| l.chars().count()) as u32 + 1;
            Err(ModelError::Lex {
                message: "invalid UTF-8".into(),
                span: Span {
                    start: valid,
                    end: (valid + 1).min(bytes.len()),
                    line,
                    col,
                },
            })
        }
    }
}

fn lex_error(cur: &Cursor<'_>, start: usize, line: u32, col: u32, msg: &str) -> ModelError {
    ModelError::Lex {
        message: msg.to_string(),
        span: cur.span_from(start, line, col),
    }
}

fn keyword_or_ident(word: &str) -> TokenKind {
    match word {
        "parameters" => TokenKind::Parameters,
        "variables" => TokenKind::Variables,
        "min" => TokenKind::Min,
        "max" => TokenKind::Max,
        "st" => TokenKind::St,
        "Matrix" => TokenKind::MatrixKw,
        "Vector" => TokenKind::VectorKw,
        "Scalar" => TokenKind::ScalarKw,
        "symmetric" => TokenKind::Symmetric,
        _ => TokenKind::Ident(word.to_string()),
    }
}

fn lex_number(cur: &mut Cursor<'_>) -> Result<TokenKind, ModelError> {
    let (start, line, col) = (cur.pos, cur.line, cur.col);
    while matches!(cur.peek(), Some(c) if c.is_ascii_digit()) {
        cur.bump();
    }
    // A dot is part of the literal only when a digit follows, so `1.*x`
    // lexes as `1 .* x`.
    if cur.peek() == Some('.') && matches!(cur.peek2(), Some(d) if d.is_ascii_digit()) {
        cur.bump();
        while matches!(cur.peek(), Some(c) if c.is_ascii_digit()) {
            cur.bump();
        }
    }
    if matches!(cur.peek(), Some('e') | Some('E')) {
        let save = (cur.pos, cur.line, cur.col);
        cur.bump();
        if matches!(cur.peek(), Some('+') | Some('-')) {
            cur.bump();
        }
        if matches!(cur.peek(), Some(c) if c.is_ascii_digit()) {
            while matches!(cur.peek(), Some(c) if c.is_ascii_digit()) {
                cur.bump();
            }
        } else {
            (cur.pos, cur.line, cur.col) = save;
        }
    }
    let text = &cur.src[start..cur.pos];
    match text.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(TokenKind::Number(v)),
        _ => Err(lex_error(cur, start, line, col, &format!("malformed number `{text}`"))),
    }
}
