//! Shape inference and model validation.
//!
//! Declarations carry only a kind (`Matrix`, `Vector`, `Scalar`); every
//! dimension starts symbolic and is unified while walking the expressions.
//! Validation without data checks that the model is shape-consistent for
//! *some* dimensions; binding data pins the parameter dimensions and lets
//! variable dimensions be inferred.

use crate::ast::{Ast, AstKind, BinOp, Func};
use crate::error::ModelError;
use crate::expr::{Expr, Op};
use crate::parser::{Decl, ProblemSpec, Relation};
use crate::shape::{Dim, DimConflict, DimTable, Kind, Shape};
use crate::span::Span;
use std::collections::BTreeMap;

/// A constraint with typed sides.
#[derive(Debug, Clone)]
pub struct TypedConstraint {
    pub lhs: Expr,
    pub relation: Relation,
    pub rhs: Expr,
    pub span: Span,
    pub origin: Option<usize>,
}

/// A model whose expressions have been shape-checked.
#[derive(Debug, Clone)]
pub struct ValidatedModel {
    pub spec: ProblemSpec,
    pub objective: Expr,
    pub constraints: Vec<TypedConstraint>,
    /// Resolved shape of every declared name.
    pub shapes: BTreeMap<String, Shape>,
    /// Typed `epigraph_of` expression of each auxiliary variable.
    pub epigraphs: BTreeMap<String, Expr>,
}

impl ValidatedModel {
    pub fn shape_of(&self, name: &str) -> Option<Shape> {
        self.shapes.get(name).copied()
    }
}

#[derive(Debug, Clone, Copy)]
struct Declared {
    shape: Shape,
    symmetric: bool,
    variable: bool,
}

/// Inference state: declared names and the dimension unifier.
pub struct ShapeContext {
    table: DimTable,
    names: BTreeMap<String, Declared>,
    broadcasts: Vec<(Dim, Span)>,
}

impl ShapeContext {
    fn new() -> Self {
        ShapeContext {
            table: DimTable::new(),
            names: BTreeMap::new(),
            broadcasts: Vec::new(),
        }
    }

    fn declare(&mut self, d: &Decl, variable: bool, concrete: Option<(usize, usize)>) -> Result<(), ModelError> {
        let shape = match (d.kind, concrete) {
            (Kind::Scalar, None) => Shape::Scalar,
            (Kind::Scalar, Some((1, 1))) => Shape::Scalar,
            (Kind::Vector, None) => Shape::Vector(self.table.fresh(true)),
            (Kind::Vector, Some((n, 1))) => Shape::Vector(Dim::Known(n)),
            (Kind::Matrix, None) => Shape::Matrix(self.table.fresh(true), self.table.fresh(true)),
            (Kind::Matrix, Some((r, c))) => Shape::Matrix(Dim::Known(r), Dim::Known(c)),
            (kind, Some((r, c))) => {
                return Err(ModelError::ShapeUnification {
                    name: d.name.clone(),
                    message: format!("declared {kind} but given {r}x{c} data"),
                })
            }
        };
        self.names.insert(
            d.name.clone(),
            Declared {
                shape,
                symmetric: d.symmetric,
                variable,
            },
        );
        Ok(())
    }

    fn mismatch(&mut self, node: &Ast, c: DimConflict) -> ModelError {
        let left = self.table.resolve(c.left);
        let right = self.table.resolve(c.right);
        ModelError::ShapeMismatch {
            node: node.to_string(),
            left: left.to_string(),
            right: right.to_string(),
            span: node.span,
        }
    }

    fn kind_mismatch(&mut self, node: &Ast, l: Shape, r: Shape) -> ModelError {
        let l = self.table.resolve_shape(l);
        let r = self.table.resolve_shape(r);
        ModelError::ShapeMismatch {
            node: node.to_string(),
            left: l.to_string(),
            right: r.to_string(),
            span: node.span,
        }
    }

    fn unify(&mut self, node: &Ast, a: Dim, b: Dim) -> Result<Dim, ModelError> {
        self.table.unify(a, b).map_err(|c| self.mismatch(node, c))
    }

    fn same_shape(&mut self, node: &Ast, l: Shape, r: Shape) -> Result<Shape, ModelError> {
        if std::mem::discriminant(&l) != std::mem::discriminant(&r) {
            return Err(self.kind_mismatch(node, l, r));
        }
        self.table.unify_shapes(l, r).map_err(|c| self.mismatch(node, c))
    }

    fn square(&mut self, node: &Ast, s: Shape) -> Result<Dim, ModelError> {
        match s {
            Shape::Matrix(r, c) => self.unify(node, r, c),
            Shape::Scalar => Ok(Dim::Known(1)),
            other => Err(ModelError::ShapeMismatch {
                node: node.to_string(),
                left: other.to_string(),
                right: "square Matrix".into(),
                span: node.span,
            }),
        }
    }

    /// Type an expression.
    pub fn infer(&mut self, ast: &Ast) -> Result<Expr, ModelError> {
        match &ast.kind {
            AstKind::Number(v) => Ok(Expr::constant(*v)),
            AstKind::Name(n) => {
                let d = *self.names.get(n).ok_or_else(|| ModelError::UnknownName {
                    name: n.clone(),
                    span: ast.span,
                })?;
                Ok(if d.variable {
                    Expr::var(n.clone(), d.shape)
                } else {
                    Expr::param(n.clone(), d.shape, d.symmetric)
                })
            }
            AstKind::Neg(e) => Ok(Expr::neg(self.infer(e)?)),
            AstKind::Transpose(e) => Ok(Expr::transpose(self.infer(e)?)),
            AstKind::Binary(op, l, r) => {
                let l = self.infer(l)?;
                let r = self.infer(r)?;
                self.binary(ast, *op, l, r)
            }
            AstKind::Call(f, arg) => {
                let a = self.infer(arg)?;
                self.call(ast, *f, a)
            }
        }
    }

    fn binary(&mut self, ast: &Ast, op: BinOp, l: Expr, r: Expr) -> Result<Expr, ModelError> {
        match op {
            BinOp::Add | BinOp::Sub => {
                self.same_shape(ast, l.shape, r.shape)?;
                Ok(if op == BinOp::Add {
                    Expr::add(l, r)
                } else {
                    Expr::sub(l, r)
                })
            }
            BinOp::Mul => {
                if l.shape.is_scalar() || r.shape.is_scalar() {
                    return Ok(Expr::mul(l, r));
                }
                match (l.shape, r.shape) {
                    (Shape::Matrix(_, k1), Shape::Matrix(k2, _))
                    | (Shape::Matrix(_, k1), Shape::Vector(k2))
                    | (Shape::RowVector(k1), Shape::Matrix(k2, _))
                    | (Shape::RowVector(k1), Shape::Vector(k2)) => {
                        self.unify(ast, k1, k2)?;
                    }
                    (Shape::Vector(_), Shape::RowVector(_)) => {}
                    (ls, rs) => return Err(self.kind_mismatch(ast, ls, rs)),
                }
                Ok(Expr::mul(l, r))
            }
            BinOp::Div => {
                if !r.shape.is_scalar() {
                    return Err(ModelError::Unsupported {
                        message: "`/` needs a scalar divisor; use `./` for elementwise division".into(),
                        span: ast.span,
                    });
                }
                Ok(Expr::div_scalar(l, r))
            }
            BinOp::EMul | BinOp::EDiv => {
                self.same_shape(ast, l.shape, r.shape)?;
                Ok(if op == BinOp::EMul {
                    Expr::emul(l, r)
                } else {
                    Expr::ediv(l, r)
                })
            }
            BinOp::Pow | BinOp::EPow => {
                if !r.shape.is_scalar() {
                    return Err(ModelError::Unsupported {
                        message: "exponents must be scalar".into(),
                        span: ast.span,
                    });
                }
                if op == BinOp::Pow && !l.shape.is_scalar() {
                    return Err(ModelError::Unsupported {
                        message: "matrix power is not supported; use `.^` for elementwise powers".into(),
                        span: ast.span,
                    });
                }
                Ok(Expr::pow(l, r))
            }
        }
    }

    fn call(&mut self, ast: &Ast, f: Func, a: Expr) -> Result<Expr, ModelError> {
        let elementwise = |op| Ok(Expr::unary(op, a.clone()));
        match f {
            Func::Log => elementwise(Op::Log),
            Func::Exp => elementwise(Op::Exp),
            Func::Sin => elementwise(Op::Sin),
            Func::Cos => elementwise(Op::Cos),
            Func::Tanh => elementwise(Op::Tanh),
            Func::Abs => elementwise(Op::Abs),
            Func::Norm1 => match a.shape {
                Shape::Matrix(..) => Err(ModelError::Unsupported {
                    message: "norm1 is defined for vectors and scalars".into(),
                    span: ast.span,
                }),
                _ => Ok(Expr::unary(Op::Norm1, a)),
            },
            Func::Norm2 => Ok(Expr::unary(Op::Norm2, a)),
            Func::Sum => Ok(Expr::sum(a)),
            Func::Tr => {
                self.square(ast, a.shape)?;
                Ok(Expr::unary(Op::Trace, a))
            }
            Func::Det => {
                self.square(ast, a.shape)?;
                Ok(Expr::unary(Op::Det, a))
            }
            Func::Inv => {
                self.square(ast, a.shape)?;
                Ok(Expr::unary(Op::Inv, a))
            }
            Func::Vector => {
                if !a.shape.is_scalar() {
                    return Err(ModelError::ShapeMismatch {
                        node: ast.to_string(),
                        left: a.shape.to_string(),
                        right: "Scalar".into(),
                        span: ast.span,
                    });
                }
                let d = self.table.fresh(false);
                self.broadcasts.push((d, ast.span));
                Ok(Expr::from_parts(Op::Broadcast, vec![a], Shape::Vector(d)))
            }
        }
    }

    fn relation(&mut self, c: &crate::parser::Constraint, lhs: &Expr, rhs: &Expr) -> Result<(), ModelError> {
        if lhs.shape.is_scalar() || rhs.shape.is_scalar() {
            return Ok(());
        }
        let node = Ast::binary(BinOp::Sub, c.lhs.clone(), c.rhs.clone());
        self.same_shape(&node, lhs.shape, rhs.shape).map(|_| ())
    }

    fn resolve(&mut self, e: &Expr) -> Expr {
        let table = &mut self.table;
        e.map_shapes(&mut |s| table.resolve_shape(s))
    }

    fn check_broadcasts(&mut self) -> Result<(), ModelError> {
        for (d, span) in self.broadcasts.clone() {
            if !self.table.is_anchored(d) {
                return Err(ModelError::AmbiguousBroadcast { span });
            }
        }
        Ok(())
    }
}

/// Shape-check a parsed model without data.
pub fn validate(spec: &ProblemSpec) -> Result<ValidatedModel, ModelError> {
    type_model(spec, &BTreeMap::new())
}

/// Type a model. `concrete` fixes `(rows, cols)` for any declared name
/// (bound parameter data, or explicit variable dimensions).
pub fn type_model(
    spec: &ProblemSpec,
    concrete: &BTreeMap<String, (usize, usize)>,
) -> Result<ValidatedModel, ModelError> {
    type_with_extra(spec, concrete, None).map(|(m, _)| m)
}

/// Shape of `ast` in the context of a validated model.
pub fn shape_in(spec: &ProblemSpec, ast: &Ast) -> Result<Shape, ModelError> {
    let (_, extra) = type_with_extra(spec, &BTreeMap::new(), Some(ast))?;
    Ok(extra.expect("extra expression typed").shape)
}

fn type_with_extra(
    spec: &ProblemSpec,
    concrete: &BTreeMap<String, (usize, usize)>,
    extra: Option<&Ast>,
) -> Result<(ValidatedModel, Option<Expr>), ModelError> {
    let mut cx = ShapeContext::new();
    for d in &spec.parameters {
        cx.declare(d, false, concrete.get(&d.name).copied())?;
    }
    for d in &spec.variables {
        cx.declare(d, true, concrete.get(&d.name).copied())?;
    }

    let objective = cx.infer(&spec.objective.expr)?;
    let mut constraints = Vec::with_capacity(spec.constraints.len());
    for c in &spec.constraints {
        let lhs = cx.infer(&c.lhs)?;
        let rhs = cx.infer(&c.rhs)?;
        cx.relation(c, &lhs, &rhs)?;
        constraints.push((lhs, rhs, c));
    }
    let mut epigraphs = Vec::new();
    for d in &spec.variables {
        if let Some(e) = &d.epigraph_of {
            let typed = cx.infer(e)?;
            let own = cx.names[&d.name].shape;
            cx.same_shape(e, own, typed.shape)?;
            epigraphs.push((d.name.clone(), typed));
        }
    }
    let extra = extra.map(|a| cx.infer(a)).transpose()?;
    cx.check_broadcasts()?;

    let objective = cx.resolve(&objective);
    if !objective.shape.is_scalar() {
        return Err(ModelError::NonScalarObjective {
            shape: objective.shape.to_string(),
            span: spec.objective.expr.span,
        });
    }
    let constraints = constraints
        .into_iter()
        .map(|(l, r, c)| TypedConstraint {
            lhs: cx.resolve(&l),
            relation: c.relation,
            rhs: cx.resolve(&r),
            span: c.span,
            origin: c.origin,
        })
        .collect();
    let names: Vec<(String, Shape)> = cx.names.iter().map(|(k, d)| (k.clone(), d.shape)).collect();
    let shapes = names
        .into_iter()
        .map(|(k, s)| (k, cx.table.resolve_shape(s)))
        .collect();
    let epigraphs = epigraphs.into_iter().map(|(k, e)| (k, cx.resolve(&e))).collect();
    let extra = extra.map(|e| cx.resolve(&e));
    Ok((
        ValidatedModel {
            spec: spec.clone(),
            objective,
            constraints,
            shapes,
            epigraphs,
        },
        extra,
    ))
}
