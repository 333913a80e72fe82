//! A modeling language for continuous optimization problems together with
//! the machinery to solve them: shape inference, symbolic gradients,
//! epigraph reformulation of `norm1`/`abs` terms, an L-BFGS-B inner solver
//! and an augmented Lagrangian outer loop.

pub mod ast;
pub mod auglag;
pub mod corpus;
pub mod data;
pub mod diff;
pub mod error;
pub mod eval;
pub mod expr;
pub mod infer;
pub mod lbfgsb;
pub mod lexer;
pub mod parser;
pub mod reformulate;
pub mod report;
pub mod shape;
pub mod span;

pub use error::{DataError, DiffError, EvalError, ModelError};
pub use eval::{eval, eval_batch, Env, Value};
pub use expr::{Expr, Op};
pub use parser::{parse_model, ProblemSpec};
pub use shape::{Dim, Kind, Shape};
