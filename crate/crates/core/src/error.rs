use crate::span::Span;
use thiserror::Error;

/// Errors raised while turning model text into a compiled problem.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("{span}: lex error: {message}")]
    Lex { message: String, span: Span },

    #[error("{span}: parse error: {message}{}", expected_list(.expected))]
    Parse {
        message: String,
        expected: Vec<String>,
        span: Span,
    },

    #[error("{span}: duplicate name `{name}` (first declared at {first})")]
    DuplicateName { name: String, span: Span, first: Span },

    #[error("{span}: model has no objective (expected `min` or `max`)")]
    MissingObjective { span: Span },

    #[error("{span}: unknown name `{name}`")]
    UnknownName { name: String, span: Span },

    #[error("{span}: shape mismatch in `{node}`: {left} vs {right}")]
    ShapeMismatch {
        node: String,
        left: String,
        right: String,
        span: Span,
    },

    #[error("{span}: objective must be scalar, found {shape}")]
    NonScalarObjective { shape: String, span: Span },

    #[error("{span}: cannot infer the dimension of `vector(...)` from its context")]
    AmbiguousBroadcast { span: Span },

    #[error("{span}: unsupported: {message}")]
    Unsupported { message: String, span: Span },

    #[error("{span}: non-smooth term cannot be rewritten here: {reason}")]
    NonConvexNonSmooth { reason: String, span: Span },

    #[error("parameter `{name}` has no data bound")]
    UnboundParameter { name: String },

    #[error("data bound to `{name}`, which is not a declared parameter")]
    UnknownBinding { name: String },

    #[error("cannot bind `{name}`: {message}")]
    ShapeUnification { name: String, message: String },

    #[error("dimension of variable `{name}` cannot be inferred from the data; give it explicitly")]
    UnresolvedDimension { name: String },

    #[error("internal: non-smooth node `{op}` survived reformulation")]
    NonSmoothResidue { op: String },

    #[error("bounds of `{name}` are infeasible at entry {index}: lower {lower} > upper {upper}")]
    InfeasibleBounds {
        name: String,
        index: usize,
        lower: f64,
        upper: f64,
    },

    #[error(transparent)]
    Eval(#[from] EvalError),

    #[error(transparent)]
    Diff(#[from] DiffError),
}

fn expected_list(expected: &[String]) -> String {
    if expected.is_empty() {
        String::new()
    } else {
        format!(" (expected {})", expected.join(" or "))
    }
}

impl ModelError {
    /// Source location, when the error refers to model text.
    pub fn span(&self) -> Option<Span> {
        match self {
            ModelError::Lex { span, .. }
            | ModelError::Parse { span, .. }
            | ModelError::DuplicateName { span, .. }
            | ModelError::MissingObjective { span }
            | ModelError::UnknownName { span, .. }
            | ModelError::ShapeMismatch { span, .. }
            | ModelError::NonScalarObjective { span, .. }
            | ModelError::AmbiguousBroadcast { span }
            | ModelError::Unsupported { span, .. }
            | ModelError::NonConvexNonSmooth { span, .. } => Some(*span),
            _ => None,
        }
    }
}

/// Errors from numeric evaluation of expressions.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum EvalError {
    #[error("`{name}` is not bound in the environment")]
    Unbound { name: String },

    #[error("`{name}` is bound with {found_rows}x{found_cols} data, expected {expected_rows}x{expected_cols}")]
    Dimension {
        name: String,
        expected_rows: usize,
        expected_cols: usize,
        found_rows: usize,
        found_cols: usize,
    },

    #[error("expression has symbolic shape {shape}; bind data first")]
    SymbolicShape { shape: String },

    #[error("non-finite value produced by `{op}`")]
    Numeric { op: String },
}

/// Errors from symbolic differentiation.
#[derive(Debug, Clone, Error, PartialEq)]
pub enum DiffError {
    #[error("`{op}` is not differentiable; reformulate the model first")]
    NonSmoothNode { op: String },

    #[error("can only differentiate scalar expressions, got {shape}")]
    NonScalarSource { shape: String },

    #[error("`{name}` is not a variable of the expression")]
    UnknownVariable { name: String },

    #[error("unsupported derivative: {message}")]
    Unsupported { message: String },
}

/// Errors reading numeric data files.
#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Format { line: usize, message: String },

    #[error("line {line}, column {column}: non-numeric cell `{text}`")]
    NonNumericCell {
        line: usize,
        column: usize,
        text: String,
    },
}
