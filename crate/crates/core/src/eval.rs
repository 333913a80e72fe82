//! Dense numeric evaluation of shape-annotated expressions.
//!
//! Values are `DMatrix<f64>`: scalars are 1×1, vectors n×1 and row vectors
//! 1×n. A [`Program`] linearizes one or more expressions into a schedule in
//! which every distinct node is computed exactly once, which is how the
//! objective, constraints and gradients of a problem share work.

use crate::error::EvalError;
use crate::expr::{Expr, Node, Op};
use crate::shape::Shape;
use nalgebra::DMatrix;
use std::collections::{BTreeMap, HashMap};

pub type Value = DMatrix<f64>;

pub fn scalar_value(v: f64) -> Value {
    DMatrix::from_element(1, 1, v)
}

pub fn vector_value(v: &[f64]) -> Value {
    DMatrix::from_column_slice(v.len(), 1, v)
}

/// Matrix from row-major data.
pub fn matrix_value(rows: usize, cols: usize, row_major: &[f64]) -> Value {
    DMatrix::from_row_slice(rows, cols, row_major)
}

/// Name → value bindings for parameters and variables.
#[derive(Debug, Clone, Default)]
pub struct Env {
    bindings: BTreeMap<String, Value>,
    symmetric: BTreeMap<String, bool>,
}

impl Env {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: impl Into<String>, value: Value) -> &mut Self {
        self.bindings.insert(name.into(), value);
        self
    }

    pub fn with(mut self, name: impl Into<String>, value: Value) -> Self {
        self.set(name, value);
        self
    }

    pub fn set_scalar(&mut self, name: impl Into<String>, v: f64) -> &mut Self {
        self.set(name, scalar_value(v))
    }

    pub fn set_vector(&mut self, name: impl Into<String>, v: &[f64]) -> &mut Self {
        self.set(name, vector_value(v))
    }

    pub fn set_symmetric(&mut self, name: impl Into<String>, flag: bool) -> &mut Self {
        self.symmetric.insert(name.into(), flag);
        self
    }

    pub fn is_symmetric(&self, name: &str) -> bool {
        self.symmetric.get(name).copied().unwrap_or(false)
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.bindings.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Value> {
        self.bindings.remove(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.bindings.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Value)> {
        self.bindings.iter().map(|(k, v)| (k.as_str(), v))
    }
}

/// Read access to name bindings.
pub trait Lookup {
    fn lookup(&self, name: &str) -> Option<&Value>;
}

impl Lookup for Env {
    fn lookup(&self, name: &str) -> Option<&Value> {
        self.bindings.get(name)
    }
}

/// Two environments searched top first: typically variable values over
/// problem data.
pub struct Layered<'a> {
    pub top: &'a Env,
    pub base: &'a Env,
}

impl Lookup for Layered<'_> {
    fn lookup(&self, name: &str) -> Option<&Value> {
        self.top.lookup(name).or_else(|| self.base.lookup(name))
    }
}

enum Slot<'a> {
    Borrowed(&'a Value),
    Owned(Value),
}

impl Slot<'_> {
    fn get(&self) -> &Value {
        match self {
            Slot::Borrowed(v) => v,
            Slot::Owned(v) => v,
        }
    }
}

#[derive(Debug, Clone)]
struct Instr {
    op: Op,
    args: Vec<usize>,
    rows: usize,
    cols: usize,
}

/// A linear schedule computing several expressions with shared subtrees
/// evaluated once.
#[derive(Debug, Clone)]
pub struct Program {
    instrs: Vec<Instr>,
    outputs: Vec<usize>,
}

impl Program {
    /// Schedule `roots`. Every node shape must be concrete.
    pub fn new(roots: &[Expr]) -> Result<Program, EvalError> {
        let mut index: HashMap<*const Node, usize> = HashMap::new();
        let mut instrs = Vec::new();
        let mut outputs = Vec::with_capacity(roots.len());
        for r in roots {
            let i = schedule(r, &mut index, &mut instrs)?;
            outputs.push(i);
        }
        Ok(Program { instrs, outputs })
    }

    pub fn len(&self) -> usize {
        self.instrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instrs.is_empty()
    }

    /// Evaluate all roots. Non-finite root values are reported as
    /// [`EvalError::Numeric`].
    pub fn run<L: Lookup>(&self, env: &L) -> Result<Vec<Value>, EvalError> {
        let vals = self.run_unchecked(env)?;
        for v in &vals {
            if v.iter().any(|x| !x.is_finite()) {
                return Err(EvalError::Numeric {
                    op: self.first_non_finite(env).unwrap_or_else(|| "expression".into()),
                });
            }
        }
        Ok(vals)
    }

    /// Evaluate all roots without the finiteness check.
    pub fn run_unchecked<L: Lookup>(&self, env: &L) -> Result<Vec<Value>, EvalError> {
        let slots = self.execute(env, false)?;
        Ok(self.outputs.iter().map(|&i| slots[i].get().clone()).collect())
    }

    fn execute<'e, L: Lookup>(&self, env: &'e L, stop_at_non_finite: bool) -> Result<Vec<Slot<'e>>, EvalError> {
        let mut slots: Vec<Slot<'e>> = Vec::with_capacity(self.instrs.len());
        for ins in &self.instrs {
            let slot = match &ins.op {
                Op::Param { name, .. } | Op::Var(name) => Slot::Borrowed(leaf(name, ins.rows, ins.cols, env)?),
                op => {
                    let args: Vec<&Value> = ins.args.iter().map(|&i| slots[i].get()).collect();
                    Slot::Owned(apply(op, &args, ins.rows, ins.cols))
                }
            };
            let bad = stop_at_non_finite && slot.get().iter().any(|x| !x.is_finite());
            slots.push(slot);
            if bad {
                break;
            }
        }
        Ok(slots)
    }

    fn first_non_finite<L: Lookup>(&self, env: &L) -> Option<String> {
        let slots = self.execute(env, true).ok()?;
        let last = slots.len().checked_sub(1)?;
        slots[last]
            .get()
            .iter()
            .any(|x| !x.is_finite())
            .then(|| self.instrs[last].op.name().to_string())
    }
}

fn schedule(e: &Expr, index: &mut HashMap<*const Node, usize>, instrs: &mut Vec<Instr>) -> Result<usize, EvalError> {
    if let Some(&i) = index.get(&e.ptr()) {
        return Ok(i);
    }
    let args = e
        .args
        .iter()
        .map(|a| schedule(a, index, instrs))
        .collect::<Result<Vec<_>, _>>()?;
    let (rows, cols) = concrete(&e.shape)?;
    instrs.push(Instr {
        op: e.op.clone(),
        args,
        rows,
        cols,
    });
    let i = instrs.len() - 1;
    index.insert(e.ptr(), i);
    Ok(i)
}

fn concrete(s: &Shape) -> Result<(usize, usize), EvalError> {
    s.concrete().ok_or_else(|| EvalError::SymbolicShape { shape: s.to_string() })
}

/// Evaluate one expression.
pub fn eval<L: Lookup>(e: &Expr, env: &L) -> Result<Value, EvalError> {
    let mut out = Program::new(std::slice::from_ref(e))?.run(env)?;
    Ok(out.pop().expect("one output"))
}

/// Evaluate several expressions in one pass; common subtrees are computed
/// once.
pub fn eval_batch<L: Lookup>(exprs: &[Expr], env: &L) -> Result<Vec<Value>, EvalError> {
    Program::new(exprs)?.run(env)
}

/// Recursive evaluation without any sharing. Used to cross-check the
/// scheduled evaluator.
pub fn eval_tree<L: Lookup>(e: &Expr, env: &L) -> Result<Value, EvalError> {
    let (rows, cols) = concrete(&e.shape)?;
    if let Op::Param { name, .. } | Op::Var(name) = &e.op {
        return leaf(name, rows, cols, env).cloned();
    }
    let args = e.args.iter().map(|a| eval_tree(a, env)).collect::<Result<Vec<_>, _>>()?;
    let refs: Vec<&Value> = args.iter().collect();
    Ok(apply(&e.op, &refs, rows, cols))
}

fn leaf<'e, L: Lookup>(name: &str, rows: usize, cols: usize, env: &'e L) -> Result<&'e Value, EvalError> {
    let v = env.lookup(name).ok_or_else(|| EvalError::Unbound { name: name.into() })?;
    if v.nrows() != rows || v.ncols() != cols {
        return Err(EvalError::Dimension {
            name: name.into(),
            expected_rows: rows,
            expected_cols: cols,
            found_rows: v.nrows(),
            found_cols: v.ncols(),
        });
    }
    Ok(v)
}

fn s(v: &Value) -> f64 {
    v[(0, 0)]
}

fn power(x: f64, p: f64) -> f64 {
    if p == 2.0 {
        x * x
    } else if p.fract() == 0.0 && p.abs() <= 64.0 {
        x.powi(p as i32)
    } else {
        x.powf(p)
    }
}

fn apply(op: &Op, a: &[&Value], rows: usize, cols: usize) -> Value {
    match op {
        Op::Const(v) => scalar_value(*v),
        Op::Param { .. } | Op::Var(_) => unreachable!("leaves are resolved by the caller"),
        Op::Add => a[0] + a[1],
        Op::Sub => a[0] - a[1],
        Op::Neg => -a[0],
        Op::MatMul => a[0] * a[1],
        Op::Scale => a[1] * s(a[0]),
        Op::DivScalar => a[0] / s(a[1]),
        Op::EMul => a[0].component_mul(a[1]),
        Op::EDiv => a[0].component_div(a[1]),
        Op::Pow => {
            let p = s(a[1]);
            a[0].map(|x| power(x, p))
        }
        Op::Log => a[0].map(f64::ln),
        Op::Exp => a[0].map(f64::exp),
        Op::Sin => a[0].map(f64::sin),
        Op::Cos => a[0].map(f64::cos),
        Op::Tanh => a[0].map(f64::tanh),
        Op::Abs => a[0].map(f64::abs),
        Op::Norm1 => scalar_value(a[0].iter().map(|x| x.abs()).sum()),
        Op::Norm2 => scalar_value(a[0].norm()),
        Op::Sum => scalar_value(a[0].sum()),
        Op::Trace => scalar_value(a[0].trace()),
        Op::Det => scalar_value(a[0].clone().lu().determinant()),
        Op::Inv => a[0]
            .clone()
            .try_inverse()
            .unwrap_or_else(|| DMatrix::from_element(rows, cols, f64::NAN)),
        Op::Transpose => a[0].transpose(),
        Op::Broadcast => DMatrix::from_element(rows, cols, s(a[0])),
        Op::Identity => DMatrix::identity(rows, cols),
    }
}
