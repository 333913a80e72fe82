//! Machine-readable solve reports.
//!
//! Field names are stable:
//!
//! ```text
//! status        "Optimal" | "MaxOuter" | "Stalled" | "InnerFail"
//! sense         "min" | "max"
//! objective     objective as written in the model, at `variables`
//! variables     declared name -> { rows, cols, values: [[row], ...] }
//! multipliers   one entry per constraint: { constraint, kind, values }
//!               kind is "eq", "ineq" or "bound" (bounds carry no values)
//! epigraph      { variables, multipliers }: auxiliary variables introduced
//!               for norm1/abs terms and the multipliers of their rows, in
//!               constraint order; enough to recheck the KKT conditions
//! kkt           { stationarity, eq_violation, ineq_violation, complementarity }
//! tolerances    { tol, feas_tol, comp_tol }
//! iterations    { outer, inner }
//! rho           final penalty parameter
//! wall_time_seconds
//! ```

use crate::auglag::{kkt_residuals, AuglagOptions, Kkt, SolveStatus, SolverReport};
use crate::error::EvalError;
use crate::eval::{matrix_value, Env, Value};
use crate::parser::Sense;
use crate::reformulate::{CompiledProblem, Placement};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<Vec<f64>>,
}

impl Matrix {
    pub fn from_value(v: &Value) -> Self {
        Matrix {
            rows: v.nrows(),
            cols: v.ncols(),
            values: (0..v.nrows()).map(|i| v.row(i).iter().copied().collect()).collect(),
        }
    }

    pub fn to_value(&self) -> Value {
        let flat: Vec<f64> = self.values.iter().flatten().copied().collect();
        matrix_value(self.rows, self.cols, &flat)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConstraintKind {
    Eq,
    Ineq,
    Bound,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Multiplier {
    /// 0-based position among the constraints in the model's `st` block.
    pub constraint: usize,
    pub kind: ConstraintKind,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Epigraph {
    pub variables: BTreeMap<String, Matrix>,
    pub multipliers: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Tolerances {
    pub tol: f64,
    pub feas_tol: f64,
    pub comp_tol: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Iterations {
    pub outer: usize,
    pub inner: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub status: SolveStatus,
    pub sense: String,
    pub objective: f64,
    pub variables: BTreeMap<String, Matrix>,
    pub multipliers: Vec<Multiplier>,
    pub epigraph: Epigraph,
    pub kkt: Kkt,
    pub tolerances: Tolerances,
    pub iterations: Iterations,
    pub rho: f64,
    pub wall_time_seconds: f64,
}

impl Report {
    pub fn new(
        problem: &CompiledProblem,
        result: &SolverReport,
        opts: &AuglagOptions,
        wall_time_seconds: f64,
    ) -> Result<Report, EvalError> {
        let values = problem.unpack(&result.x);
        let matrices = |aux: bool| -> BTreeMap<String, Matrix> {
            problem
                .layout
                .iter()
                .filter(|s| s.auxiliary == aux)
                .map(|s| (s.name.clone(), Matrix::from_value(values.get(&s.name).expect("unpacked"))))
                .collect()
        };
        let mut multipliers = Vec::new();
        let mut epigraph = Epigraph {
            variables: matrices(true),
            multipliers: Vec::new(),
        };
        for c in &problem.placements {
            let (kind, values) = match &c.placement {
                Placement::Eq(i) => {
                    let b = &problem.eq[*i];
                    (ConstraintKind::Eq, result.lambda[b.offset..b.offset + b.len].to_vec())
                }
                Placement::Ineq(i) => {
                    let b = &problem.ineq[*i];
                    (ConstraintKind::Ineq, result.mu[b.offset..b.offset + b.len].to_vec())
                }
                Placement::Bound(_) => (ConstraintKind::Bound, Vec::new()),
            };
            match c.origin {
                Some(constraint) => multipliers.push(Multiplier {
                    constraint,
                    kind,
                    values,
                }),
                None => epigraph.multipliers.push(values),
            }
        }
        Ok(Report {
            status: result.status,
            sense: match problem.sense {
                Sense::Min => "min",
                Sense::Max => "max",
            }
            .to_string(),
            objective: problem.user_objective_value(&result.x)?,
            variables: matrices(false),
            multipliers,
            epigraph,
            kkt: result.kkt,
            tolerances: Tolerances {
                tol: opts.tol,
                feas_tol: opts.feas_tol,
                comp_tol: opts.comp_tol,
            },
            iterations: Iterations {
                outer: result.outer_iterations,
                inner: result.inner_iterations,
            },
            rho: result.rho,
            wall_time_seconds,
        })
    }

    /// Reported variables as an environment.
    pub fn variable_env(&self) -> Env {
        let mut env = Env::new();
        for (name, m) in &self.variables {
            env.set(name.clone(), m.to_value());
        }
        env
    }

    /// Full primal-dual point `(x, λ, μ)` of `problem` described by this
    /// report. `problem` must be compiled from the same model and data.
    pub fn primal_dual(&self, problem: &CompiledProblem) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut vars = self.variable_env();
        for (name, m) in &self.epigraph.variables {
            vars.set(name.clone(), m.to_value());
        }
        let x = problem.pack(&vars);
        let mut lambda = vec![0.0; problem.m];
        let mut mu = vec![0.0; problem.p];
        let mut user = self.multipliers.iter();
        let mut aux = self.epigraph.multipliers.iter();
        for c in &problem.placements {
            let values = match c.origin {
                Some(_) => user.next().map(|m| &m.values),
                None => aux.next(),
            };
            let Some(values) = values else { break };
            let (target, b) = match &c.placement {
                Placement::Eq(i) => (&mut lambda, &problem.eq[*i]),
                Placement::Ineq(i) => (&mut mu, &problem.ineq[*i]),
                Placement::Bound(_) => continue,
            };
            if values.len() == b.len {
                target[b.offset..b.offset + b.len].copy_from_slice(values);
            }
        }
        (x, lambda, mu)
    }

    /// KKT residuals recomputed from scratch at the reported point.
    pub fn recheck(&self, problem: &CompiledProblem) -> Result<Kkt, EvalError> {
        let (x, lambda, mu) = self.primal_dual(problem);
        kkt_residuals(problem, &x, &lambda, &mu)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> serde_json::Result<Report> {
        serde_json::from_str(text)
    }
}
