//! From a parsed model to the standard form
//!
//! ```text
//! min f(x)  s.t.  h(x) = 0,  g(x) <= 0,  lower <= x <= upper
//! ```
//!
//! [`desmooth`] removes `norm1`/`abs` by epigraph variables, [`compile`]
//! binds data, extracts simple bounds, stacks residuals and derives the
//! symbolic gradients the solver needs.
//!
//! Accepted non-smooth patterns, where `+` means the term enters a minimized
//! objective (or the smaller side of `<=`) with a non-negative factor:
//!
//! * `norm1(e)`, `sum(abs(e))` and scalar `abs(e)`;
//! * those terms scaled by a variable-free scalar (`c * norm1(e)`,
//!   `norm1(e) * c`, `norm1(e) / c`), reached through `+`, `-` and unary
//!   minus with the sign tracked.
//!
//! Factors that are parameters are assumed non-negative. Everything else
//! containing a non-smooth node is rejected with
//! [`ModelError::NonConvexNonSmooth`].

use crate::ast::{Ast, AstKind, BinOp, Func};
use crate::diff::{differentiate_with_shapes, GradientSet};
use crate::error::{EvalError, ModelError};
use crate::eval::{eval, Env, Layered, Program, Value};
use crate::expr::{Expr, Interner, Op};
use crate::infer::{shape_in, type_model, ValidatedModel};
use crate::parser::{Constraint, Decl, ProblemSpec, Relation, Sense};
use crate::shape::{Kind, Shape};
use std::collections::{BTreeMap, BTreeSet};

fn has_non_smooth(a: &Ast) -> bool {
    first_non_smooth(a).is_some()
}

fn first_non_smooth(a: &Ast) -> Option<&Ast> {
    let mut found = None;
    a.walk(&mut |n| {
        if found.is_none() && matches!(n.kind, AstKind::Call(Func::Abs | Func::Norm1, _)) {
            found = Some(n);
        }
    });
    found
}

fn literal_sign(a: &Ast) -> Option<f64> {
    match &a.kind {
        AstKind::Number(v) => Some(*v),
        AstKind::Neg(e) => literal_sign(e).map(|v| -v),
        _ => None,
    }
}

struct Rewriter<'a> {
    spec: &'a ProblemSpec,
    taken: BTreeSet<String>,
    next: usize,
    aux: Vec<Decl>,
    rows: Vec<Constraint>,
}

impl Rewriter<'_> {
    fn fresh_name(&mut self) -> String {
        loop {
            self.next += 1;
            let name = format!("_t{}", self.next);
            if self.taken.insert(name.clone()) {
                return name;
            }
        }
    }

    fn reject(&self, at: &Ast, reason: &str) -> ModelError {
        let span = first_non_smooth(at).map_or(at.span, |n| n.span);
        ModelError::NonConvexNonSmooth {
            reason: format!("{reason} in `{at}`"),
            span,
        }
    }

    fn coefficient_ok(&self, c: &Ast) -> Result<bool, ModelError> {
        let variable_free = c.names().iter().all(|n| self.spec.variable(n).is_none());
        if !variable_free || has_non_smooth(c) {
            return Ok(false);
        }
        Ok(shape_in(self.spec, c)?.is_scalar())
    }

    /// Rewrite `a`, which enters the minimized quantity with sign
    /// `positive`.
    fn side(&mut self, a: &Ast, positive: bool) -> Result<Ast, ModelError> {
        if !has_non_smooth(a) {
            return Ok(a.clone());
        }
        let span = a.span;
        match &a.kind {
            AstKind::Binary(op @ (BinOp::Add | BinOp::Sub), l, r) => {
                let l = self.side(l, positive)?;
                let r = self.side(r, if *op == BinOp::Add { positive } else { !positive })?;
                Ok(Ast::new(AstKind::Binary(*op, Box::new(l), Box::new(r)), span))
            }
            AstKind::Neg(e) => Ok(Ast::new(AstKind::Neg(Box::new(self.side(e, !positive)?)), span)),
            AstKind::Binary(BinOp::Mul, l, r) if !has_non_smooth(l) && self.coefficient_ok(l)? => {
                let sign = literal_sign(l).is_none_or(|v| v >= 0.0);
                let r = self.side(r, positive == sign)?;
                Ok(Ast::new(AstKind::Binary(BinOp::Mul, l.clone(), Box::new(r)), span))
            }
            AstKind::Binary(op @ (BinOp::Mul | BinOp::Div), l, r) if !has_non_smooth(r) && self.coefficient_ok(r)? => {
                let sign = literal_sign(r).is_none_or(|v| v >= 0.0);
                let l = self.side(l, positive == sign)?;
                Ok(Ast::new(AstKind::Binary(*op, Box::new(l), r.clone()), span))
            }
            AstKind::Call(Func::Norm1, e) => self.epigraph(a, e, positive, false),
            AstKind::Call(Func::Abs, e) => self.epigraph(a, e, positive, true),
            AstKind::Call(Func::Sum, inner) if matches!(inner.kind, AstKind::Call(Func::Abs, _)) => {
                let AstKind::Call(_, e) = &inner.kind else { unreachable!() };
                self.epigraph(a, e, positive, false)
            }
            _ => Err(self.reject(a, "non-smooth term nested inside a smooth operation")),
        }
    }

    fn epigraph(&mut self, whole: &Ast, e: &Ast, positive: bool, scalar_only: bool) -> Result<Ast, ModelError> {
        if !positive {
            return Err(self.reject(whole, "non-smooth term would be maximized"));
        }
        if has_non_smooth(e) {
            return Err(self.reject(e, "nested non-smooth terms"));
        }
        let shape = shape_in(self.spec, e)?;
        if scalar_only && !shape.is_scalar() {
            return Err(self.reject(whole, "`abs` of a non-scalar must appear as `sum(abs(...))`"));
        }
        let span = whole.span;
        let (kind, e) = match shape {
            Shape::Scalar => (Kind::Scalar, e.clone()),
            Shape::Vector(_) => (Kind::Vector, e.clone()),
            Shape::RowVector(_) => (Kind::Vector, Ast::new(AstKind::Transpose(Box::new(e.clone())), e.span)),
            Shape::Matrix(..) => (Kind::Matrix, e.clone()),
        };
        let t = self.fresh_name();
        let t_ast = Ast::name(t.clone(), span);
        let zero = Ast::number(0.0, span);
        let upper = Ast::binary(BinOp::Sub, e.clone(), t_ast.clone());
        let lower = Ast::binary(BinOp::Sub, Ast::neg(e.clone()), t_ast.clone());
        for lhs in [upper, lower] {
            self.rows.push(Constraint {
                lhs,
                relation: Relation::Le,
                rhs: zero.clone(),
                span,
                origin: None,
            });
        }
        self.aux.push(Decl {
            name: t,
            kind,
            symmetric: false,
            span,
            epigraph_of: Some(e),
        });
        Ok(if kind == Kind::Scalar {
            t_ast
        } else {
            Ast::call(Func::Sum, t_ast)
        })
    }
}

/// Replace every `norm1`/`abs` term by an epigraph variable. Models without
/// non-smooth terms come back unchanged.
pub fn desmooth(spec: &ProblemSpec) -> Result<ProblemSpec, ModelError> {
    crate::infer::validate(spec)?;
    let mut rw = Rewriter {
        spec,
        taken: spec.parameters.iter().chain(&spec.variables).map(|d| d.name.clone()).collect(),
        next: 0,
        aux: Vec::new(),
        rows: Vec::new(),
    };
    let mut out = spec.clone();
    out.objective.expr = rw.side(&spec.objective.expr, spec.objective.sense == Sense::Min)?;
    for c in &mut out.constraints {
        let (l, r) = match c.relation {
            Relation::Le => (true, false),
            Relation::Ge => (false, true),
            Relation::Eq => {
                for side in [&c.lhs, &c.rhs] {
                    if has_non_smooth(side) {
                        return Err(rw.reject(side, "non-smooth term in an equality"));
                    }
                }
                continue;
            }
        };
        c.lhs = rw.side(&c.lhs, l)?;
        c.rhs = rw.side(&c.rhs, r)?;
    }
    out.variables.extend(rw.aux);
    out.constraints.extend(rw.rows);
    Ok(out)
}

/// Flat position of one variable.
#[derive(Debug, Clone, PartialEq)]
pub struct VarSlot {
    pub name: String,
    pub shape: Shape,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
    pub auxiliary: bool,
}

impl VarSlot {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Where a constraint of the compiled model ended up.
#[derive(Debug, Clone, PartialEq)]
pub enum Placement {
    /// Residual block `index` of `h`.
    Eq(usize),
    /// Residual block `index` of `g`.
    Ineq(usize),
    /// Folded into the bounds of a variable.
    Bound(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintMap {
    /// Index among the user-written constraints; `None` for epigraph rows.
    pub origin: Option<usize>,
    pub placement: Placement,
    /// Number of scalar rows.
    pub rows: usize,
}

/// Options for [`compile`].
#[derive(Debug, Clone, Default)]
pub struct CompileOptions {
    /// Explicit `(rows, cols)` for variables whose size the data does not
    /// determine.
    pub dims: BTreeMap<String, (usize, usize)>,
    /// Starting values for user variables (zero otherwise).
    pub init: Env,
}

/// A residual block: its expression and its slice of the stacked vector.
#[derive(Debug, Clone)]
pub struct Block {
    pub expr: Expr,
    pub offset: usize,
    pub len: usize,
    pub origin: Option<usize>,
    multiplier: String,
}

/// A model in standard form with data bound.
#[derive(Debug, Clone)]
pub struct CompiledProblem {
    pub layout: Vec<VarSlot>,
    pub n: usize,
    /// Objective to minimize (negated for `max` models).
    pub objective: Expr,
    pub sense: Sense,
    /// The objective as written, for reporting. May contain `norm1`/`abs`.
    pub user_objective: Expr,
    pub eq: Vec<Block>,
    pub ineq: Vec<Block>,
    pub m: usize,
    pub p: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub placements: Vec<ConstraintMap>,
    /// Gradient of `f + Σ u_i'h_i + Σ v_j'g_j` with multipliers bound as
    /// parameters.
    pub gradients: GradientSet,
    pub x0: Vec<f64>,
    data: Env,
    values: Program,
    grads: Program,
    grad_order: Vec<usize>,
}

/// Objective value and stacked residuals at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub f: f64,
    pub h: Vec<f64>,
    pub g: Vec<f64>,
}

fn flatten_into(v: &Value, out: &mut [f64]) {
    let cols = v.ncols();
    for (k, o) in out.iter_mut().enumerate() {
        *o = v[(k / cols, k % cols)];
    }
}

fn unflatten(rows: usize, cols: usize, flat: &[f64]) -> Value {
    Value::from_row_slice(rows, cols, flat)
}

fn dims_of(s: &Shape) -> (usize, usize) {
    s.concrete().expect("concrete after binding")
}

fn check_symmetric(name: &str, v: &Value) -> Result<(), ModelError> {
    let scale = v.amax().max(1.0);
    if v.nrows() != v.ncols() || (v - v.transpose()).amax() > 1e-10 * scale {
        return Err(ModelError::ShapeUnification {
            name: name.to_string(),
            message: "declared symmetric but the data is not".into(),
        });
    }
    Ok(())
}

/// Normalize parameter data: vectors given as a row become a column.
fn bind_data(spec: &ProblemSpec, data: &Env) -> Result<Env, ModelError> {
    for (name, _) in data.iter() {
        if spec.parameter(name).is_none() {
            return Err(ModelError::UnknownBinding { name: name.to_string() });
        }
    }
    let mut env = Env::new();
    for d in &spec.parameters {
        let v = data
            .get(&d.name)
            .ok_or_else(|| ModelError::UnboundParameter { name: d.name.clone() })?;
        let v = if d.kind == Kind::Vector && v.nrows() == 1 { v.transpose() } else { v.clone() };
        if d.symmetric {
            check_symmetric(&d.name, &v)?;
        }
        env.set(d.name.clone(), v);
        env.set_symmetric(d.name.clone(), d.symmetric);
    }
    Ok(env)
}

/// Bind data to a model (already passed through [`desmooth`]) and bring it
/// into standard form.
pub fn compile(spec: &ProblemSpec, data: &Env, opts: &CompileOptions) -> Result<CompiledProblem, ModelError> {
    let data = bind_data(spec, data)?;
    let mut concrete: BTreeMap<String, (usize, usize)> =
        data.iter().map(|(k, v)| (k.to_string(), (v.nrows(), v.ncols()))).collect();
    for d in &spec.variables {
        if let Some(&rc) = opts.dims.get(&d.name) {
            concrete.insert(d.name.clone(), rc);
        } else if let Some(v) = opts.init.get(&d.name) {
            concrete.insert(d.name.clone(), (v.nrows(), v.ncols()));
        }
    }
    let model = type_model(spec, &concrete)?;

    let mut layout = Vec::new();
    let mut n = 0;
    for d in &spec.variables {
        let shape = model.shape_of(&d.name).expect("declared");
        let (rows, cols) = shape
            .concrete()
            .ok_or_else(|| ModelError::UnresolvedDimension { name: d.name.clone() })?;
        layout.push(VarSlot {
            name: d.name.clone(),
            shape,
            rows,
            cols,
            offset: n,
            auxiliary: d.is_auxiliary(),
        });
        n += rows * cols;
    }

    let mut objective = model.objective.clone();
    if spec.objective.sense == Sense::Max {
        objective = Expr::neg(objective);
    }
    let mut lower = vec![f64::NEG_INFINITY; n];
    let mut upper = vec![f64::INFINITY; n];
    let mut eq = Vec::new();
    let mut ineq = Vec::new();
    let mut placements = Vec::new();
    let (mut m, mut p) = (0, 0);

    for c in &model.constraints {
        if let Some((var, bound, is_lower)) = as_bound(&c.lhs, c.relation, &c.rhs) {
            let slot = layout.iter().find(|s| s.name == var).expect("declared");
            let value = eval(&bound, &data)?;
            for k in 0..slot.len() {
                let b = if value.len() == 1 { value[(0, 0)] } else { value[(k / slot.cols, k % slot.cols)] };
                let i = slot.offset + k;
                if is_lower {
                    lower[i] = lower[i].max(b);
                } else {
                    upper[i] = upper[i].min(b);
                }
            }
            placements.push(ConstraintMap {
                origin: c.origin,
                placement: Placement::Bound(var),
                rows: slot.len(),
            });
            continue;
        }
        let (a, b) = match c.relation {
            Relation::Eq | Relation::Le => (c.lhs.clone(), c.rhs.clone()),
            Relation::Ge => (c.rhs.clone(), c.lhs.clone()),
        };
        let (a, b) = match (a.shape.is_scalar(), b.shape.is_scalar()) {
            (true, false) => (Expr::broadcast(a, b.shape), b),
            (false, true) => {
                let s = a.shape;
                (a, Expr::broadcast(b, s))
            }
            _ => (a, b),
        };
        let r = Expr::sub(a, b);
        let (rows, cols) = dims_of(&r.shape);
        let len = rows * cols;
        if c.relation == Relation::Eq {
            placements.push(ConstraintMap {
                origin: c.origin,
                placement: Placement::Eq(eq.len()),
                rows: len,
            });
            eq.push(Block {
                multiplier: format!("#u{}", eq.len()),
                expr: r,
                offset: m,
                len,
                origin: c.origin,
            });
            m += len;
        } else {
            placements.push(ConstraintMap {
                origin: c.origin,
                placement: Placement::Ineq(ineq.len()),
                rows: len,
            });
            ineq.push(Block {
                multiplier: format!("#v{}", ineq.len()),
                expr: r,
                offset: p,
                len,
                origin: c.origin,
            });
            p += len;
        }
    }
    for (i, (l, u)) in lower.iter().zip(&upper).enumerate() {
        if l > u {
            let slot = layout.iter().rfind(|s| s.offset <= i).expect("in layout");
            return Err(ModelError::InfeasibleBounds {
                name: slot.name.clone(),
                index: i - slot.offset,
                lower: *l,
                upper: *u,
            });
        }
    }

    for e in std::iter::once(&objective).chain(eq.iter().map(|b| &b.expr)).chain(ineq.iter().map(|b| &b.expr)) {
        let mut residue = None;
        e.visit(&mut |x| {
            if x.op.is_non_smooth() {
                residue = Some(x.op.name().to_string());
            }
        });
        if let Some(op) = residue {
            return Err(ModelError::NonSmoothResidue { op });
        }
    }

    let mut interner = Interner::new();
    let objective = interner.intern(&objective);
    for b in eq.iter_mut().chain(ineq.iter_mut()) {
        b.expr = interner.intern(&b.expr);
    }
    let mut phi = objective.clone();
    for b in eq.iter().chain(&ineq) {
        let u = Expr::param(b.multiplier.clone(), b.expr.shape, false);
        phi = Expr::add(phi, Expr::inner(u, b.expr.clone()));
    }
    let phi = interner.intern(&phi);
    let wrt: Vec<(String, Shape)> = layout.iter().map(|s| (s.name.clone(), s.shape)).collect();
    let raw = differentiate_with_shapes(&phi, &wrt)?;
    let mut gradients = GradientSet::default();
    for (name, g) in raw.iter() {
        gradients.insert(name, interner.intern(g));
    }

    let mut roots = vec![objective.clone()];
    roots.extend(eq.iter().chain(&ineq).map(|b| b.expr.clone()));
    let values = Program::new(&roots)?;
    let grad_roots: Vec<Expr> = layout
        .iter()
        .map(|s| gradients.get(&s.name).expect("every variable differentiated").clone())
        .collect();
    let grads = Program::new(&grad_roots)?;
    let grad_order = (0..layout.len()).collect();

    let user_objective = model.objective.clone();
    let mut problem = CompiledProblem {
        layout,
        n,
        objective,
        sense: spec.objective.sense,
        user_objective,
        eq,
        ineq,
        m,
        p,
        lower,
        upper,
        placements,
        gradients,
        x0: Vec::new(),
        data,
        values,
        grads,
        grad_order,
    };
    problem.x0 = problem.initial_point(&model, &opts.init)?;
    Ok(problem)
}

/// Recognize `var ⋛ c` and `c ⋛ var` with `c` free of variables. Returns the
/// variable, the bound expression and whether it is a lower bound.
fn as_bound(lhs: &Expr, rel: Relation, rhs: &Expr) -> Option<(String, Expr, bool)> {
    let lower_when_var_left = match rel {
        Relation::Eq => return None,
        Relation::Ge => true,
        Relation::Le => false,
    };
    match (&lhs.op, &rhs.op) {
        (Op::Var(v), _) if !rhs.has_variables() => Some((v.clone(), rhs.clone(), lower_when_var_left)),
        (_, Op::Var(v)) if !lhs.has_variables() => Some((v.clone(), lhs.clone(), !lower_when_var_left)),
        _ => None,
    }
}

/// Desmooth and compile in one step, keeping the user's objective (with its
/// `norm1`/`abs` terms) for reporting.
pub fn build(spec: &ProblemSpec, data: &Env, opts: &CompileOptions) -> Result<CompiledProblem, ModelError> {
    let smooth = desmooth(spec)?;
    let mut problem = compile(&smooth, data, opts)?;
    if smooth != *spec {
        let mut concrete: BTreeMap<String, (usize, usize)> = problem
            .data
            .iter()
            .map(|(k, v)| (k.to_string(), (v.nrows(), v.ncols())))
            .collect();
        for s in problem.layout.iter().filter(|s| !s.auxiliary) {
            concrete.insert(s.name.clone(), (s.rows, s.cols));
        }
        problem.user_objective = type_model(spec, &concrete)?.objective;
    }
    Ok(problem)
}

impl CompiledProblem {
    pub fn data(&self) -> &Env {
        &self.data
    }

    pub fn slot(&self, name: &str) -> Option<&VarSlot> {
        self.layout.iter().find(|s| s.name == name)
    }

    /// Variable values as matrices, by name.
    pub fn unpack(&self, x: &[f64]) -> Env {
        let mut env = Env::new();
        for s in &self.layout {
            env.set(s.name.clone(), unflatten(s.rows, s.cols, &x[s.offset..s.offset + s.len()]));
        }
        env
    }

    /// Flatten named variable values; missing names are left at zero.
    pub fn pack(&self, vars: &Env) -> Vec<f64> {
        let mut x = vec![0.0; self.n];
        for s in &self.layout {
            if let Some(v) = vars.get(&s.name) {
                flatten_into(v, &mut x[s.offset..s.offset + s.len()]);
            }
        }
        x
    }

    fn initial_point(&self, model: &ValidatedModel, init: &Env) -> Result<Vec<f64>, ModelError> {
        let mut x = vec![0.0; self.n];
        for s in self.layout.iter().filter(|s| !s.auxiliary) {
            if let Some(v) = init.get(&s.name) {
                if (v.nrows(), v.ncols()) != (s.rows, s.cols) {
                    return Err(ModelError::ShapeUnification {
                        name: s.name.clone(),
                        message: format!("initial value is {}x{}, expected {}x{}", v.nrows(), v.ncols(), s.rows, s.cols),
                    });
                }
                flatten_into(v, &mut x[s.offset..s.offset + s.len()]);
            }
        }
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = xi.clamp(self.lower[i], self.upper[i]);
        }
        let vars = self.unpack(&x);
        let env = Layered { top: &vars, base: &self.data };
        for s in self.layout.iter().filter(|s| s.auxiliary) {
            let e = &model.epigraphs[&s.name];
            let v = eval(e, &env)?;
            let out = &mut x[s.offset..s.offset + s.len()];
            flatten_into(&v, out);
            for t in out.iter_mut() {
                *t = t.abs() + 1.0;
            }
        }
        Ok(x)
    }

    /// Objective (minimization form) and stacked residuals.
    pub fn residuals(&self, x: &[f64]) -> Result<Residuals, EvalError> {
        let vars = self.unpack(x);
        let out = self.values.run(&Layered { top: &vars, base: &self.data })?;
        let mut h = vec![0.0; self.m];
        let mut g = vec![0.0; self.p];
        for (b, v) in self.eq.iter().zip(&out[1..]) {
            flatten_into(v, &mut h[b.offset..b.offset + b.len]);
        }
        for (b, v) in self.ineq.iter().zip(&out[1 + self.eq.len()..]) {
            flatten_into(v, &mut g[b.offset..b.offset + b.len]);
        }
        Ok(Residuals { f: out[0][(0, 0)], h, g })
    }

    /// `∇f + J_h' u + J_g' v`.
    pub fn gradient(&self, x: &[f64], u: &[f64], v: &[f64]) -> Result<Vec<f64>, EvalError> {
        let mut vars = self.unpack(x);
        for (b, w) in self.eq.iter().map(|b| (b, u)).chain(self.ineq.iter().map(|b| (b, v))) {
            let (rows, cols) = dims_of(&b.expr.shape);
            vars.set(b.multiplier.clone(), unflatten(rows, cols, &w[b.offset..b.offset + b.len]));
        }
        let out = self.grads.run(&Layered { top: &vars, base: &self.data })?;
        let mut grad = vec![0.0; self.n];
        for (&i, val) in self.grad_order.iter().zip(&out) {
            let s = &self.layout[i];
            flatten_into(val, &mut grad[s.offset..s.offset + s.len()]);
        }
        Ok(grad)
    }

    /// The objective as the user wrote it, at the user variables in `x`.
    pub fn user_objective_value(&self, x: &[f64]) -> Result<f64, EvalError> {
        let vars = self.unpack(x);
        Ok(eval(&self.user_objective, &Layered { top: &vars, base: &self.data })?[(0, 0)])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{matrix_value, scalar_value, vector_value};
    use crate::parser::parse_model;

    fn smooth(src: &str) -> Result<ProblemSpec, ModelError> {
        desmooth(&parse_model(src).unwrap())
    }

    #[test]
    fn smooth_model_unchanged() {
        let spec = parse_model("parameters Matrix X Vector y variables Vector w min norm2(X*w - y).^2").unwrap();
        assert_eq!(desmooth(&spec).unwrap(), spec);
    }

    #[test]
    fn norm1_objective_gets_vector_epigraph() {
        let out = smooth("parameters Matrix A Vector b variables Vector x min norm1(x) st A*x == b").unwrap();
        assert_eq!(out.objective.expr.to_string(), "sum(_t1)");
        assert_eq!(out.variables[1].kind, Kind::Vector);
        assert!(out.variables[1].is_auxiliary());
        let rows: Vec<String> = out.constraints[1..].iter().map(|c| format!("{} <= {}", c.lhs, c.rhs)).collect();
        assert_eq!(rows, ["x - _t1 <= 0", "-x - _t1 <= 0"]);
        assert!(out.constraints[1..].iter().all(|c| c.origin.is_none()));
    }

    #[test]
    fn scaled_term_keeps_coefficient() {
        let out = smooth("parameters Scalar a1 variables Vector w min a1 * norm1(w) + w'*w").unwrap();
        assert_eq!(out.objective.expr.to_string(), "a1 * sum(_t1) + w' * w");
    }

    #[test]
    fn maximized_norm_rejected() {
        for src in [
            "variables Vector x min -norm1(x)",
            "variables Vector x max norm1(x)",
            "variables Vector x min x'*x - 2 * norm1(x)",
            "variables Vector x min norm1(x) * norm1(x)",
            "variables Vector x min exp(norm1(x))",
            "variables Vector x min sum(x) st norm1(x) >= 1",
            "variables Vector x min sum(x) st norm1(x) == 1",
        ] {
            let err = smooth(src).unwrap_err();
            assert!(matches!(err, ModelError::NonConvexNonSmooth { .. }), "{src}: {err:?}");
        }
    }

    #[test]
    fn max_of_negated_norm_accepted() {
        let out = smooth("variables Vector x max -norm1(x) - x'*x").unwrap();
        assert_eq!(out.objective.expr.to_string(), "-sum(_t1) - x' * x");
    }

    #[test]
    fn constraint_norm_ball() {
        let out = smooth("variables Vector x Scalar s min s st norm1(x) <= 1 1 >= abs(s)").unwrap();
        assert_eq!(out.constraints[0].lhs.to_string(), "sum(_t1)");
        assert_eq!(out.constraints[1].rhs.to_string(), "_t2");
        assert_eq!(out.constraints[0].origin, Some(0));
        assert_eq!(out.constraints.len(), 6);
    }

    #[test]
    fn vector_abs_needs_sum() {
        assert!(smooth("variables Vector x min sum(abs(x))").is_ok());
        assert!(smooth("variables Scalar x min abs(x - 1)").is_ok());
    }

    #[test]
    fn fresh_names_avoid_user_names() {
        let out = smooth("variables Vector _t1 min norm1(_t1)").unwrap();
        assert_eq!(out.variables[1].name, "_t2");
    }

    fn svm_data() -> Env {
        let mut env = Env::new();
        env.set("K", matrix_value(2, 2, &[2.0, 1.0, 1.0, 2.0]));
        env.set_scalar("c", 3.0);
        env.set_vector("y", &[1.0, -1.0]);
        env
    }

    #[test]
    fn svm_box_and_equality() {
        let spec = parse_model(
            "parameters Matrix K symmetric Scalar c Vector y variables Vector a \
             min 0.5 * (a.*y)' * K * (a.*y) - sum(a) st a >= 0 a <= vector(c) y' * a == 0",
        )
        .unwrap();
        let p = compile(&spec, &svm_data(), &CompileOptions::default()).unwrap();
        assert_eq!((p.n, p.m, p.p), (2, 1, 0));
        assert_eq!(p.lower, [0.0, 0.0]);
        assert_eq!(p.upper, [3.0, 3.0]);
        assert_eq!(p.placements.iter().filter(|c| matches!(c.placement, Placement::Bound(_))).count(), 2);
    }

    #[test]
    fn unconstrained_has_infinite_bounds() {
        let spec = parse_model("variables Vector x min x'*x").unwrap();
        let mut opts = CompileOptions::default();
        opts.dims.insert("x".into(), (3, 1));
        let p = compile(&spec, &Env::new(), &opts).unwrap();
        assert_eq!((p.m, p.p), (0, 0));
        assert!(p.lower.iter().all(|l| *l == f64::NEG_INFINITY));
        assert!(p.upper.iter().all(|u| *u == f64::INFINITY));
    }

    #[test]
    fn ge_becomes_le_residual() {
        let spec = parse_model("variables Vector x min x'*x st sum(x) >= 1").unwrap();
        let mut opts = CompileOptions::default();
        opts.dims.insert("x".into(), (2, 1));
        let p = compile(&spec, &Env::new(), &opts).unwrap();
        let r = p.residuals(&[0.25, 0.25]).unwrap();
        assert_eq!(r.g, [0.5]);
    }

    #[test]
    fn infeasible_bounds_reported() {
        let spec = parse_model("variables Vector x min x'*x st x >= 2 x <= 1").unwrap();
        let mut opts = CompileOptions::default();
        opts.dims.insert("x".into(), (2, 1));
        let err = compile(&spec, &Env::new(), &opts).unwrap_err();
        assert!(matches!(err, ModelError::InfeasibleBounds { .. }));
    }

    #[test]
    fn unbound_and_unknown_bindings() {
        let spec = parse_model("parameters Vector b variables Vector x min norm2(x - b)").unwrap();
        let err = compile(&spec, &Env::new(), &CompileOptions::default()).unwrap_err();
        assert_eq!(err, ModelError::UnboundParameter { name: "b".into() });
        let data = Env::new().with("b", vector_value(&[1.0])).with("q", scalar_value(1.0));
        let err = compile(&spec, &data, &CompileOptions::default()).unwrap_err();
        assert_eq!(err, ModelError::UnknownBinding { name: "q".into() });
    }

    #[test]
    fn variable_dims_must_be_known() {
        let spec = parse_model("variables Vector x min x'*x").unwrap();
        let err = compile(&spec, &Env::new(), &CompileOptions::default()).unwrap_err();
        assert_eq!(err, ModelError::UnresolvedDimension { name: "x".into() });
    }

    #[test]
    fn epigraph_start_is_strictly_feasible() {
        let spec = parse_model("parameters Matrix A Vector b variables Vector x min norm1(x) st A*x == b").unwrap();
        let data = Env::new()
            .with("A", matrix_value(1, 2, &[1.0, 1.0]))
            .with("b", vector_value(&[1.0]));
        let mut opts = CompileOptions::default();
        opts.init.set_vector("x", &[0.5, -2.0]);
        let p = build(&spec, &data, &opts).unwrap();
        assert_eq!(p.x0, [0.5, -2.0, 1.5, 3.0]);
        let r = p.residuals(&p.x0).unwrap();
        assert!(r.g.iter().all(|g| *g < 0.0));
        assert_eq!(p.user_objective_value(&p.x0).unwrap(), 2.5);
        assert_eq!(r.f, 4.5);
    }

    #[test]
    fn multiplier_gradient_matches_hand_value() {
        let spec = parse_model("variables Scalar x min x^2 st x == 1").unwrap();
        let p = compile(&spec, &Env::new(), &CompileOptions::default()).unwrap();
        assert_eq!(p.gradient(&[3.0], &[-2.0], &[]).unwrap(), [4.0]);
    }

    #[test]
    fn matrix_variable_is_row_major() {
        let spec = parse_model("parameters Matrix T variables Matrix U min norm2(T - U).^2").unwrap();
        let data = Env::new().with("T", matrix_value(2, 2, &[1.0, 2.0, 3.0, 4.0]));
        let p = compile(&spec, &data, &CompileOptions::default()).unwrap();
        let x = [1.0, 2.0, 3.0, 5.0];
        assert_eq!(p.unpack(&x).get("U").unwrap()[(1, 0)], 3.0);
        assert_eq!(p.gradient(&x, &[], &[]).unwrap(), [0.0, 0.0, 0.0, 2.0]);
        assert_eq!(p.pack(&p.unpack(&x)), x);
    }

    #[test]
    fn max_objective_is_negated() {
        let spec = parse_model("variables Scalar x max -(x - 1)^2").unwrap();
        let p = compile(&spec, &Env::new(), &CompileOptions::default()).unwrap();
        assert_eq!(p.residuals(&[0.0]).unwrap().f, 1.0);
        assert_eq!(p.user_objective_value(&[0.0]).unwrap(), -1.0);
    }
}
