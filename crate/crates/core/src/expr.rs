//! Shape-annotated expression IR.
//!
//! Nodes are immutable and reference-counted, so subtrees can be shared
//! between an objective, its constraints and their symbolic gradients. The
//! evaluator exploits that sharing: a node reachable along several paths is
//! computed once per evaluation.

use crate::shape::{Dim, Shape};
use std::collections::HashMap;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::sync::Arc;

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// Scalar literal.
    Const(f64),
    Param { name: String, symmetric: bool },
    Var(String),
    Add,
    Sub,
    Neg,
    /// Product of two non-scalar operands (matrix, vector and row-vector
    /// products, including inner and outer products).
    MatMul,
    /// `s * X` with scalar `s` as the first argument.
    Scale,
    /// `X / s` with scalar divisor.
    DivScalar,
    EMul,
    EDiv,
    /// Elementwise power with a scalar exponent as the second argument.
    Pow,
    Log,
    Exp,
    Sin,
    Cos,
    Tanh,
    Abs,
    Norm1,
    /// Euclidean norm of a vector, Frobenius norm of a matrix.
    Norm2,
    Sum,
    Trace,
    Det,
    Inv,
    Transpose,
    /// Fill a value of the node's shape with the scalar argument.
    Broadcast,
    /// Identity matrix of the node's shape.
    Identity,
}

impl Op {
    pub fn name(&self) -> &str {
        match self {
            Op::Const(_) => "const",
            Op::Param { name, .. } => name,
            Op::Var(name) => name,
            Op::Add => "+",
            Op::Sub => "-",
            Op::Neg => "neg",
            Op::MatMul => "*",
            Op::Scale => "scale",
            Op::DivScalar => "/",
            Op::EMul => ".*",
            Op::EDiv => "./",
            Op::Pow => ".^",
            Op::Log => "log",
            Op::Exp => "exp",
            Op::Sin => "sin",
            Op::Cos => "cos",
            Op::Tanh => "tanh",
            Op::Abs => "abs",
            Op::Norm1 => "norm1",
            Op::Norm2 => "norm2",
            Op::Sum => "sum",
            Op::Trace => "tr",
            Op::Det => "det",
            Op::Inv => "inv",
            Op::Transpose => "'",
            Op::Broadcast => "vector",
            Op::Identity => "eye",
        }
    }

    pub fn is_non_smooth(&self) -> bool {
        matches!(self, Op::Abs | Op::Norm1)
    }
}

impl Hash for Op {
    fn hash<H: Hasher>(&self, state: &mut H) {
        std::mem::discriminant(self).hash(state);
        match self {
            Op::Const(v) => v.to_bits().hash(state),
            Op::Param { name, symmetric } => {
                name.hash(state);
                symmetric.hash(state);
            }
            Op::Var(name) => name.hash(state),
            _ => {}
        }
    }
}

impl Eq for Op {}

#[derive(Debug)]
pub struct Node {
    pub op: Op,
    pub args: Vec<Expr>,
    pub shape: Shape,
}

/// Handle to an immutable expression node.
#[derive(Debug, Clone)]
pub struct Expr(Arc<Node>);

impl std::ops::Deref for Expr {
    type Target = Node;
    fn deref(&self) -> &Node {
        &self.0
    }
}

/// Structural equality (not pointer identity).
impl PartialEq for Expr {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.op == other.op && self.shape == other.shape && self.args == other.args)
    }
}

impl Expr {
    /// Build a node with an explicit shape. Callers are responsible for the
    /// shape being consistent with the arguments.
    pub fn from_parts(op: Op, args: Vec<Expr>, shape: Shape) -> Expr {
        Expr(Arc::new(Node { op, args, shape }))
    }

    pub fn ptr(&self) -> *const Node {
        Arc::as_ptr(&self.0)
    }

    pub fn ptr_eq(&self, other: &Expr) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
    }

    pub fn constant(v: f64) -> Expr {
        Expr::from_parts(Op::Const(v), vec![], Shape::Scalar)
    }

    pub fn param(name: impl Into<String>, shape: Shape, symmetric: bool) -> Expr {
        Expr::from_parts(
            Op::Param {
                name: name.into(),
                symmetric,
            },
            vec![],
            shape,
        )
    }

    pub fn var(name: impl Into<String>, shape: Shape) -> Expr {
        Expr::from_parts(Op::Var(name.into()), vec![], shape)
    }

    pub fn as_const(&self) -> Option<f64> {
        match self.op {
            Op::Const(v) => Some(v),
            _ => None,
        }
    }

    pub fn add(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            return Expr::constant(x + y);
        }
        let shape = a.shape;
        Expr::from_parts(Op::Add, vec![a, b], shape)
    }

    pub fn sub(a: Expr, b: Expr) -> Expr {
        if let (Some(x), Some(y)) = (a.as_const(), b.as_const()) {
            return Expr::constant(x - y);
        }
        let shape = a.shape;
        Expr::from_parts(Op::Sub, vec![a, b], shape)
    }

    pub fn neg(a: Expr) -> Expr {
        if let Some(x) = a.as_const() {
            return Expr::constant(-x);
        }
        if a.op == Op::Neg {
            return a.args[0].clone();
        }
        let shape = a.shape;
        Expr::from_parts(Op::Neg, vec![a], shape)
    }

    /// `a * b`: scaling when either side is scalar, otherwise a matrix
    /// product.
    pub fn mul(a: Expr, b: Expr) -> Expr {
        match (a.shape.is_scalar(), b.shape.is_scalar()) {
            (true, _) => Expr::scale(a, b),
            (false, true) => Expr::scale(b, a),
            (false, false) => {
                let shape = product_shape(a.shape, b.shape);
                Expr::from_parts(Op::MatMul, vec![a, b], shape)
            }
        }
    }

    pub fn scale(s: Expr, x: Expr) -> Expr {
        debug_assert!(s.shape.is_scalar());
        if let Some(c) = s.as_const() {
            if c == 1.0 {
                return x;
            }
            if c == -1.0 {
                return Expr::neg(x);
            }
            if let Some(v) = x.as_const() {
                return Expr::constant(c * v);
            }
        }
        if x.shape.is_scalar() && x.as_const().is_some() && s.as_const().is_none() {
            return Expr::scale(x, s);
        }
        let shape = x.shape;
        Expr::from_parts(Op::Scale, vec![s, x], shape)
    }

    pub fn div_scalar(x: Expr, s: Expr) -> Expr {
        debug_assert!(s.shape.is_scalar());
        if let (Some(a), Some(b)) = (x.as_const(), s.as_const()) {
            return Expr::constant(a / b);
        }
        if s.as_const() == Some(1.0) {
            return x;
        }
        let shape = x.shape;
        Expr::from_parts(Op::DivScalar, vec![x, s], shape)
    }

    pub fn emul(a: Expr, b: Expr) -> Expr {
        if a.shape.is_scalar() && b.shape.is_scalar() {
            return Expr::mul(a, b);
        }
        let shape = a.shape;
        Expr::from_parts(Op::EMul, vec![a, b], shape)
    }

    pub fn ediv(a: Expr, b: Expr) -> Expr {
        if b.shape.is_scalar() {
            return Expr::div_scalar(a, b);
        }
        let shape = a.shape;
        Expr::from_parts(Op::EDiv, vec![a, b], shape)
    }

    pub fn pow(x: Expr, p: Expr) -> Expr {
        debug_assert!(p.shape.is_scalar());
        match (x.as_const(), p.as_const()) {
            (Some(a), Some(b)) => return Expr::constant(a.powf(b)),
            (_, Some(1.0)) => return x,
            _ => {}
        }
        let shape = x.shape;
        Expr::from_parts(Op::Pow, vec![x, p], shape)
    }

    pub fn unary(op: Op, x: Expr) -> Expr {
        let shape = match op {
            Op::Norm1 | Op::Norm2 | Op::Sum | Op::Trace | Op::Det => Shape::Scalar,
            Op::Transpose => x.shape.transpose(),
            _ => x.shape,
        };
        if let Some(v) = x.as_const() {
            let folded = match op {
                Op::Log => Some(v.ln()),
                Op::Exp => Some(v.exp()),
                Op::Sin => Some(v.sin()),
                Op::Cos => Some(v.cos()),
                Op::Tanh => Some(v.tanh()),
                Op::Abs | Op::Norm1 | Op::Norm2 => Some(v.abs()),
                Op::Sum | Op::Trace | Op::Det | Op::Transpose => Some(v),
                Op::Inv => Some(1.0 / v),
                _ => None,
            };
            if let Some(f) = folded {
                return Expr::constant(f);
            }
        }
        if op == Op::Transpose {
            return Expr::transpose(x);
        }
        Expr::from_parts(op, vec![x], shape)
    }

    pub fn transpose(x: Expr) -> Expr {
        if x.shape.is_scalar() {
            return x;
        }
        match &x.op {
            Op::Transpose => return x.args[0].clone(),
            Op::Param { symmetric: true, .. } | Op::Identity => return x,
            Op::Inv if is_symmetric(&x.args[0]) => return x,
            Op::Broadcast => return Expr::broadcast(x.args[0].clone(), x.shape.transpose()),
            _ => {}
        }
        let shape = x.shape.transpose();
        Expr::from_parts(Op::Transpose, vec![x], shape)
    }

    /// Fill `shape` with the scalar `s`. A scalar shape returns `s` itself.
    pub fn broadcast(s: Expr, shape: Shape) -> Expr {
        debug_assert!(s.shape.is_scalar());
        if shape.is_scalar() {
            return s;
        }
        Expr::from_parts(Op::Broadcast, vec![s], shape)
    }

    pub fn identity(n: Dim) -> Expr {
        Expr::from_parts(Op::Identity, vec![], Shape::Matrix(n, n))
    }

    pub fn sum(x: Expr) -> Expr {
        if x.shape.is_scalar() {
            return x;
        }
        if x.op == Op::Broadcast {
            if let Some(n) = x.shape.len() {
                return Expr::scale(Expr::constant(n as f64), x.args[0].clone());
            }
        }
        Expr::from_parts(Op::Sum, vec![x], Shape::Scalar)
    }

    /// `sum(a .* b)`, the Frobenius inner product, specialised to a plain
    /// product for scalars and a dot product for vectors.
    pub fn inner(a: Expr, b: Expr) -> Expr {
        match a.shape {
            Shape::Scalar => Expr::mul(a, b),
            Shape::Vector(_) => Expr::mul(Expr::transpose(a), b),
            Shape::RowVector(_) => Expr::mul(a, Expr::transpose(b)),
            Shape::Matrix(..) => Expr::sum(Expr::emul(a, b)),
        }
    }

    /// True when the subtree references any variable.
    pub fn has_variables(&self) -> bool {
        match &self.op {
            Op::Var(_) => true,
            _ => self.args.iter().any(|a| a.has_variables()),
        }
    }

    /// Pre-order visit of every node; shared nodes are visited once.
    pub fn visit(&self, f: &mut impl FnMut(&Expr)) {
        let mut seen = std::collections::HashSet::new();
        self.visit_inner(f, &mut seen);
    }

    fn visit_inner(&self, f: &mut impl FnMut(&Expr), seen: &mut std::collections::HashSet<*const Node>) {
        if !seen.insert(self.ptr()) {
            return;
        }
        f(self);
        for a in &self.args {
            a.visit_inner(f, seen);
        }
    }

    /// Names of variables referenced, in first-visit order.
    pub fn variables(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        self.visit(&mut |e| {
            if let Op::Var(n) = &e.op {
                if !out.contains(n) {
                    out.push(n.clone());
                }
            }
        });
        out
    }

    /// Number of tree nodes counting shared subtrees once per path.
    pub fn tree_size(&self) -> usize {
        1 + self.args.iter().map(|a| a.tree_size()).sum::<usize>()
    }

    /// Number of distinct nodes.
    pub fn dag_size(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_| n += 1);
        n
    }

    /// Rebuild the tree bottom-up, mapping every node's shape through `f`.
    pub fn map_shapes(&self, f: &mut impl FnMut(Shape) -> Shape) -> Expr {
        let mut memo = HashMap::new();
        self.map_shapes_inner(f, &mut memo)
    }

    fn map_shapes_inner(&self, f: &mut impl FnMut(Shape) -> Shape, memo: &mut HashMap<*const Node, Expr>) -> Expr {
        if let Some(e) = memo.get(&self.ptr()) {
            return e.clone();
        }
        let args = self.args.iter().map(|a| a.map_shapes_inner(f, memo)).collect();
        let out = Expr::from_parts(self.op.clone(), args, f(self.shape));
        memo.insert(self.ptr(), out.clone());
        out
    }
}

fn is_symmetric(e: &Expr) -> bool {
    match &e.op {
        Op::Param { symmetric, .. } => *symmetric,
        Op::Identity => true,
        _ => false,
    }
}

fn product_shape(a: Shape, b: Shape) -> Shape {
    let (ra, _) = a.dims();
    let (_, cb) = b.dims();
    match (a, b) {
        (Shape::RowVector(_), Shape::Vector(_)) => Shape::Scalar,
        (Shape::Vector(_), Shape::RowVector(_)) | (Shape::Matrix(..), Shape::Matrix(..)) => Shape::Matrix(ra, cb),
        (Shape::Vector(_), Shape::Matrix(..)) => Shape::Matrix(ra, cb),
        (Shape::Matrix(..), Shape::Vector(_)) => Shape::Vector(ra),
        (Shape::RowVector(_), Shape::Matrix(..)) => Shape::RowVector(cb),
        (Shape::Matrix(..), Shape::RowVector(_)) => Shape::Matrix(ra, cb),
        (Shape::RowVector(_), Shape::RowVector(_)) | (Shape::Vector(_), Shape::Vector(_)) => Shape::Matrix(ra, cb),
        _ => unreachable!("scalar operands are handled by Expr::mul"),
    }
}

/// Merge structurally identical subtrees so that each distinct computation
/// is represented by one node. Pointer sharing is what the evaluator caches
/// on, so interning turns textual repetition into computed-once sharing.
#[derive(Default)]
pub struct Interner {
    table: HashMap<(Op, Shape, Vec<usize>), Expr>,
    /// Source node (kept alive so its address stays unique) and its
    /// interned replacement.
    done: HashMap<*const Node, (Expr, Expr)>,
}

impl Interner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn intern(&mut self, e: &Expr) -> Expr {
        if let Some((_, x)) = self.done.get(&e.ptr()) {
            return x.clone();
        }
        let args: Vec<Expr> = e.args.iter().map(|a| self.intern(a)).collect();
        let key = (e.op.clone(), e.shape, args.iter().map(|a| a.ptr() as usize).collect());
        let out = self
            .table
            .entry(key)
            .or_insert_with(|| Expr::from_parts(e.op.clone(), args, e.shape))
            .clone();
        self.done.insert(e.ptr(), (e.clone(), out.clone()));
        out
    }
}

fn needs_parens(e: &Expr) -> bool {
    !e.args.is_empty()
        && !matches!(
            e.op,
            Op::Log
                | Op::Exp
                | Op::Sin
                | Op::Cos
                | Op::Tanh
                | Op::Abs
                | Op::Norm1
                | Op::Norm2
                | Op::Sum
                | Op::Trace
                | Op::Det
                | Op::Inv
                | Op::Broadcast
                | Op::Transpose
        )
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sub = |f: &mut fmt::Formatter<'_>, e: &Expr| {
            if needs_parens(e) {
                write!(f, "({e})")
            } else {
                write!(f, "{e}")
            }
        };
        match &self.op {
            Op::Const(v) => write!(f, "{v}"),
            Op::Param { name, .. } | Op::Var(name) => f.write_str(name),
            Op::Identity => write!(f, "eye({})", self.shape.dims().0),
            Op::Neg => {
                f.write_str("-")?;
                sub(f, &self.args[0])
            }
            Op::Transpose => {
                sub(f, &self.args[0])?;
                f.write_str("'")
            }
            Op::Add | Op::Sub | Op::MatMul | Op::Scale | Op::DivScalar | Op::EMul | Op::EDiv | Op::Pow => {
                let sym = match self.op {
                    Op::Scale => "*",
                    ref op => op.name(),
                };
                sub(f, &self.args[0])?;
                write!(f, " {sym} ")?;
                sub(f, &self.args[1])
            }
            op => write!(f, "{}({})", op.name(), self.args[0]),
        }
    }
}
