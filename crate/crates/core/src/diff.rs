//! Symbolic reverse-mode differentiation of scalar expressions.
//!
//! Adjoints are themselves expressions, so a gradient is an ordinary
//! [`Expr`] that reuses the forward nodes (`exp(x)` appears once whether it
//! is needed by the value or by the gradient). Gradients follow the
//! same-shape convention: the gradient with respect to a `Matrix(m,n)`
//! variable is an `m×n` matrix.

use crate::error::{DiffError, EvalError};
use crate::eval::{Env, Program, Value};
use crate::expr::{Expr, Node, Op};
use crate::shape::Shape;
use std::collections::{BTreeMap, HashMap, HashSet};

/// Gradient expressions keyed by variable name.
#[derive(Debug, Clone, Default)]
pub struct GradientSet {
    grads: BTreeMap<String, Expr>,
}

impl GradientSet {
    pub fn get(&self, name: &str) -> Option<&Expr> {
        self.grads.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Expr)> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn insert(&mut self, name: impl Into<String>, e: Expr) {
        self.grads.insert(name.into(), e);
    }
}

/// Gradients of the scalar `f` with respect to each named variable. Every
/// name must occur in `f`.
pub fn differentiate(f: &Expr, vars: &[&str]) -> Result<GradientSet, DiffError> {
    let mut shapes = HashMap::new();
    f.visit(&mut |e| {
        if let Op::Var(n) = &e.op {
            shapes.insert(n.clone(), e.shape);
        }
    });
    let mut with_shapes = Vec::with_capacity(vars.len());
    for v in vars {
        let s = shapes
            .get(*v)
            .ok_or_else(|| DiffError::UnknownVariable { name: v.to_string() })?;
        with_shapes.push((v.to_string(), *s));
    }
    differentiate_with_shapes(f, &with_shapes)
}

/// Like [`differentiate`], but variables absent from `f` get an explicit
/// zero gradient of the given shape.
pub fn differentiate_with_shapes(f: &Expr, vars: &[(String, Shape)]) -> Result<GradientSet, DiffError> {
    if !f.shape.is_scalar() {
        return Err(DiffError::NonScalarSource {
            shape: f.shape.to_string(),
        });
    }
    let wanted: HashSet<&str> = vars.iter().map(|(n, _)| n.as_str()).collect();

    let mut order: Vec<Expr> = Vec::new();
    let mut depends: HashMap<*const Node, bool> = HashMap::new();
    topo(f, &wanted, &mut order, &mut depends);

    let mut adjoint: HashMap<*const Node, Expr> = HashMap::new();
    let mut result: BTreeMap<String, Expr> = BTreeMap::new();
    adjoint.insert(f.ptr(), Expr::constant(1.0));

    for node in order.iter().rev() {
        let Some(bar) = adjoint.remove(&node.ptr()) else {
            continue;
        };
        if !depends[&node.ptr()] {
            continue;
        }
        let dep = |i: usize| depends[&node.args[i].ptr()];
        let mut push = |target: &Expr, contrib: Expr| {
            let slot = adjoint.remove(&target.ptr());
            let acc = match slot {
                None => contrib,
                Some(prev) => Expr::add(prev, contrib),
            };
            adjoint.insert(target.ptr(), acc);
        };
        let a = &node.args;
        match &node.op {
            Op::Var(name) => {
                let acc = match result.remove(name) {
                    None => bar,
                    Some(prev) => Expr::add(prev, bar),
                };
                result.insert(name.clone(), acc);
            }
            Op::Const(_) | Op::Param { .. } | Op::Identity => {}
            Op::Abs | Op::Norm1 => {
                return Err(DiffError::NonSmoothNode {
                    op: node.op.name().to_string(),
                })
            }
            Op::Add => {
                if dep(0) {
                    push(&a[0], bar.clone());
                }
                if dep(1) {
                    push(&a[1], bar);
                }
            }
            Op::Sub => {
                if dep(0) {
                    push(&a[0], bar.clone());
                }
                if dep(1) {
                    push(&a[1], Expr::neg(bar));
                }
            }
            Op::Neg => push(&a[0], Expr::neg(bar)),
            Op::MatMul => {
                if dep(0) {
                    push(&a[0], Expr::mul(bar.clone(), Expr::transpose(a[1].clone())));
                }
                if dep(1) {
                    push(&a[1], Expr::mul(Expr::transpose(a[0].clone()), bar));
                }
            }
            Op::Scale => {
                if dep(0) {
                    push(&a[0], Expr::inner(bar.clone(), a[1].clone()));
                }
                if dep(1) {
                    push(&a[1], Expr::scale(a[0].clone(), bar));
                }
            }
            Op::DivScalar => {
                if dep(1) {
                    let t = Expr::div_scalar(Expr::inner(bar.clone(), node.clone()), a[1].clone());
                    push(&a[1], Expr::neg(t));
                }
                if dep(0) {
                    push(&a[0], Expr::div_scalar(bar, a[1].clone()));
                }
            }
            Op::EMul => {
                if dep(0) {
                    push(&a[0], Expr::emul(bar.clone(), a[1].clone()));
                }
                if dep(1) {
                    push(&a[1], Expr::emul(bar, a[0].clone()));
                }
            }
            Op::EDiv => {
                if dep(1) {
                    let t = Expr::emul(bar.clone(), Expr::ediv(node.clone(), a[1].clone()));
                    push(&a[1], Expr::neg(t));
                }
                if dep(0) {
                    push(&a[0], Expr::ediv(bar, a[1].clone()));
                }
            }
            Op::Pow => {
                if dep(1) {
                    return Err(DiffError::Unsupported {
                        message: "exponent depends on a variable".into(),
                    });
                }
                let base = &a[0];
                let p = a[1].clone();
                if base.op == Op::Norm2 && p.as_const() == Some(2.0) {
                    // d‖e‖² = 2e, avoiding the 0/0 of the chain through ‖e‖.
                    let inner = &base.args[0];
                    push(inner, Expr::scale(Expr::scale(Expr::constant(2.0), bar), inner.clone()));
                } else {
                    let pm1 = Expr::sub(p.clone(), Expr::constant(1.0));
                    let d = Expr::scale(p, Expr::pow(base.clone(), pm1));
                    push(base, Expr::emul(bar, d));
                }
            }
            Op::Log => push(&a[0], Expr::ediv(bar, a[0].clone())),
            Op::Exp => push(&a[0], Expr::emul(bar, node.clone())),
            Op::Sin => push(&a[0], Expr::emul(bar, Expr::unary(Op::Cos, a[0].clone()))),
            Op::Cos => push(&a[0], Expr::neg(Expr::emul(bar, Expr::unary(Op::Sin, a[0].clone())))),
            Op::Tanh => {
                let ones = Expr::broadcast(Expr::constant(1.0), node.shape);
                let d = Expr::sub(ones, Expr::emul(node.clone(), node.clone()));
                push(&a[0], Expr::emul(bar, d));
            }
            Op::Norm2 => push(&a[0], Expr::scale(Expr::div_scalar(bar, node.clone()), a[0].clone())),
            Op::Sum => push(&a[0], Expr::broadcast(bar, a[0].shape)),
            Op::Trace => {
                let n = a[0].shape.dims().0;
                let eye = if a[0].shape.is_scalar() {
                    Expr::constant(1.0)
                } else {
                    Expr::identity(n)
                };
                push(&a[0], Expr::scale(bar, eye));
            }
            Op::Det => {
                let inv_t = Expr::transpose(Expr::unary(Op::Inv, a[0].clone()));
                push(&a[0], Expr::scale(Expr::mul(bar, node.clone()), inv_t));
            }
            Op::Inv => {
                let yt = Expr::transpose(node.clone());
                push(&a[0], Expr::neg(Expr::mul(Expr::mul(yt.clone(), bar), yt)));
            }
            Op::Transpose => push(&a[0], Expr::transpose(bar)),
            Op::Broadcast => push(&a[0], Expr::sum(bar)),
        }
    }

    let mut out = GradientSet::default();
    for (name, shape) in vars {
        let g = result
            .remove(name)
            .unwrap_or_else(|| Expr::broadcast(Expr::constant(0.0), *shape));
        out.insert(name.clone(), g);
    }
    Ok(out)
}

fn topo(e: &Expr, wanted: &HashSet<&str>, order: &mut Vec<Expr>, depends: &mut HashMap<*const Node, bool>) -> bool {
    if let Some(&d) = depends.get(&e.ptr()) {
        return d;
    }
    let mut d = matches!(&e.op, Op::Var(n) if wanted.contains(n.as_str()));
    for a in &e.args {
        d |= topo(a, wanted, order, depends);
    }
    depends.insert(e.ptr(), d);
    order.push(e.clone());
    d
}

/// Compare symbolic gradients against central finite differences at `env`.
///
/// The step for coordinate `i` is `eps * (1 + |x_i|)`. The error for a
/// coordinate is `|fd - g| / max(1, |g|, |fd|)`; the worst one is returned.
pub fn check_gradient(f: &Expr, grads: &GradientSet, env: &Env, eps: f64) -> Result<f64, EvalError> {
    let fprog = Program::new(std::slice::from_ref(f))?;
    let names: Vec<&str> = grads.iter().map(|(n, _)| n).collect();
    let gexprs: Vec<Expr> = grads.iter().map(|(_, e)| e.clone()).collect();
    let analytic = Program::new(&gexprs)?.run(env)?;
    fprog.run(env)?;

    let value_at = |env: &Env| -> Result<f64, EvalError> { Ok(fprog.run(env)?[0][(0, 0)]) };
    let mut worst: f64 = 0.0;
    let mut probe = env.clone();
    for (name, g) in names.iter().zip(&analytic) {
        let base: Value = env.get(name).ok_or_else(|| EvalError::Unbound { name: name.to_string() })?.clone();
        for i in 0..base.len() {
            let xi = base[i];
            let h = eps * (1.0 + xi.abs());
            let mut plus = base.clone();
            plus[i] = xi + h;
            probe.set(*name, plus);
            let fp = value_at(&probe)?;
            let mut minus = base.clone();
            minus[i] = xi - h;
            probe.set(*name, minus);
            let fm = value_at(&probe)?;
            let fd = (fp - fm) / (2.0 * h);
            let gi = g[i];
            let err = (fd - gi).abs() / 1f64.max(gi.abs()).max(fd.abs());
            worst = worst.max(err);
        }
        probe.set(*name, base);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{eval, matrix_value, vector_value};
    use crate::shape::Dim;

    fn vshape(n: usize) -> Shape {
        Shape::Vector(Dim::Known(n))
    }

    fn mshape(r: usize, c: usize) -> Shape {
        Shape::Matrix(Dim::Known(r), Dim::Known(c))
    }

    #[test]
    fn quadratic_form() {
        let x = Expr::var("x", vshape(2));
        let a = Expr::param("A", mshape(2, 2), false);
        let f = Expr::mul(Expr::mul(Expr::transpose(x.clone()), a), x);
        let g = differentiate(&f, &["x"]).unwrap();
        let env = Env::new()
            .with("x", vector_value(&[1.0, -2.0]))
            .with("A", matrix_value(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let val = eval(g.get("x").unwrap(), &env).unwrap();
        // (A + A') x = [[2,5],[5,8]] [1,-2] = [-8, -11]
        assert_eq!(val.as_slice(), &[-8.0, -11.0]);
    }

    #[test]
    fn least_squares() {
        let w = Expr::var("w", vshape(2));
        let x = Expr::param("X", mshape(3, 2), false);
        let y = Expr::param("y", vshape(3), false);
        let r = Expr::sub(Expr::mul(x, w), y);
        let f = Expr::pow(Expr::unary(Op::Norm2, r), Expr::constant(2.0));
        let g = differentiate(&f, &["w"]).unwrap();
        let env = Env::new()
            .with("w", vector_value(&[0.5, -1.0]))
            .with("X", matrix_value(3, 2, &[1.0, 2.0, 0.0, 1.0, 3.0, -1.0]))
            .with("y", vector_value(&[1.0, 0.0, 2.0]));
        // residual = [-2.5, -1, 0.5]; 2 X' r = 2 [-2.5 + 1.5, -5 - 1 - 0.5] = [-2, -13]
        let val = eval(g.get("w").unwrap(), &env).unwrap();
        assert!((val[0] + 2.0).abs() < 1e-12 && (val[1] + 13.0).abs() < 1e-12);
        // exact at a zero residual: no 0/0
        let env0 = env.clone().with("y", vector_value(&[-1.5, -1.0, 2.5]));
        let val = eval(g.get("w").unwrap(), &env0).unwrap();
        assert!(val.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn finite_difference_check_catches_wrong_gradient() {
        let x = Expr::var("x", vshape(2));
        let f = Expr::mul(Expr::transpose(x.clone()), x.clone());
        let env = Env::new().with("x", vector_value(&[1.0, 2.0]));
        let good = differentiate(&f, &["x"]).unwrap();
        assert!(check_gradient(&f, &good, &env, 1e-6).unwrap() <= 1e-9);
        let mut bad = GradientSet::default();
        bad.insert("x", x);
        let err = check_gradient(&f, &bad, &env, 1e-6).unwrap();
        assert!(err > 0.3, "{err}");
    }

    #[test]
    fn non_smooth_nodes_are_refused() {
        let x = Expr::var("x", vshape(3));
        let f = Expr::unary(Op::Norm1, x);
        assert_eq!(
            differentiate(&f, &["x"]).unwrap_err(),
            DiffError::NonSmoothNode { op: "norm1".into() }
        );
    }

    #[test]
    fn vector_source_refused() {
        let x = Expr::var("x", vshape(3));
        assert!(matches!(
            differentiate(&x, &["x"]),
            Err(DiffError::NonScalarSource { .. })
        ));
    }

    #[test]
    fn matrix_functions_against_finite_differences() {
        let m = Expr::var("M", mshape(3, 3));
        let logdet = Expr::unary(Op::Log, Expr::unary(Op::Det, m.clone()));
        let tr_inv = Expr::unary(Op::Trace, Expr::unary(Op::Inv, m.clone()));
        let f = Expr::add(Expr::add(logdet, tr_inv), Expr::unary(Op::Trace, Expr::mul(m.clone(), m.clone())));
        let g = differentiate(&f, &["M"]).unwrap();
        let env = Env::new().with("M", matrix_value(3, 3, &[4.0, 1.0, 0.5, 0.2, 3.0, 0.1, -0.3, 0.4, 5.0]));
        assert!(check_gradient(&f, &g, &env, 1e-6).unwrap() < 1e-7);
    }

    #[test]
    fn elementwise_functions_against_finite_differences() {
        let x = Expr::var("x", vshape(4));
        let s = Expr::var("s", Shape::Scalar);
        let body = Expr::add(
            Expr::emul(Expr::unary(Op::Sin, x.clone()), Expr::unary(Op::Tanh, x.clone())),
            Expr::ediv(Expr::unary(Op::Cos, x.clone()), Expr::unary(Op::Exp, x.clone())),
        );
        let f = Expr::add(
            Expr::scale(s.clone(), Expr::sum(Expr::pow(body, Expr::constant(3.0)))),
            Expr::div_scalar(Expr::unary(Op::Norm2, x.clone()), s.clone()),
        );
        let g = differentiate(&f, &["x", "s"]).unwrap();
        let env = Env::new()
            .with("x", vector_value(&[0.3, -1.2, 2.0, 0.7]))
            .with("s", crate::eval::scalar_value(1.7));
        assert!(check_gradient(&f, &g, &env, 1e-6).unwrap() < 1e-7);
    }

    #[test]
    fn absent_variable_gets_zero_gradient() {
        let x = Expr::var("x", vshape(2));
        let f = Expr::sum(x);
        let g = differentiate_with_shapes(&f, &[("x".into(), vshape(2)), ("z".into(), vshape(3))]).unwrap();
        let env = Env::new();
        assert_eq!(eval(g.get("z").unwrap(), &env).unwrap().as_slice(), &[0.0; 3]);
        assert!(differentiate(&f, &["z"]).is_err());
    }
}
