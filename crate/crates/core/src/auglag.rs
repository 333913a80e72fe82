//! Augmented Lagrangian outer loop.
//!
//! For `min f(x)` subject to `h(x) = 0`, `g(x) <= 0` and box bounds, each
//! outer iteration minimizes
//!
//! ```text
//! L_ρ(x, λ, μ) = f(x) + ρ/2 ‖h(x) + λ/ρ‖² + ρ/2 ‖(g(x) + μ/ρ)₊‖²
//! ```
//!
//! over the box with L-BFGS-B, then sets `λ ← λ + ρ h`, `μ ← (μ + ρ g)₊`
//! and doubles `ρ` whenever the constraint violation failed to drop below
//! half of its previous value.

use crate::error::EvalError;
use crate::lbfgsb::{minimize, projected_gradient_norm, Bounds, InnerStatus, LbfgsbOptions};
use crate::reformulate::CompiledProblem;
use serde::{Deserialize, Serialize};

/// Primal-dual iterate of the outer loop.
#[derive(Debug, Clone, PartialEq)]
pub struct AuglagState {
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub rho: f64,
    pub prev_violation: f64,
}

impl AuglagState {
    pub fn new(x: Vec<f64>, m: usize, p: usize) -> Self {
        AuglagState {
            x,
            lambda: vec![0.0; m],
            mu: vec![0.0; p],
            rho: 1.0,
            prev_violation: f64::INFINITY,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuglagOptions {
    /// Stationarity tolerance; also the tightest inner tolerance.
    pub tol: f64,
    pub feas_tol: f64,
    pub comp_tol: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub history: usize,
    pub rho0: f64,
    pub rho_max: f64,
}

impl Default for AuglagOptions {
    fn default() -> Self {
        AuglagOptions {
            tol: 1e-6,
            feas_tol: 1e-6,
            comp_tol: 1e-6,
            max_outer: 200,
            max_inner: 10_000,
            history: 10,
            rho0: 1.0,
            rho_max: 1e12,
        }
    }
}

/// First-order optimality residuals, all as ∞-norms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kkt {
    /// Projected gradient of `f + λ'h + μ'g` with respect to the box.
    pub stationarity: f64,
    pub eq_violation: f64,
    pub ineq_violation: f64,
    /// `max |μ_i g_i|`.
    pub complementarity: f64,
}

impl Kkt {
    pub fn within(&self, opts: &AuglagOptions) -> bool {
        self.stationarity <= opts.tol
            && self.eq_violation <= opts.feas_tol
            && self.ineq_violation <= opts.feas_tol
            && self.complementarity <= opts.comp_tol
    }

    pub fn violation(&self) -> f64 {
        self.eq_violation.max(self.ineq_violation)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Optimal,
    MaxOuter,
    /// `ρ` exceeded its cap.
    Stalled,
    InnerFail,
}

/// One outer iteration, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OuterRecord {
    pub violation: f64,
    pub rho: f64,
    pub inner_iterations: usize,
    pub inner_status: InnerStatus,
}

#[derive(Debug, Clone)]
pub struct SolverReport {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    /// Objective in minimization form.
    pub f: f64,
    pub kkt: Kkt,
    pub rho: f64,
    pub outer_iterations: usize,
    pub inner_iterations: usize,
    pub history: Vec<OuterRecord>,
}

fn inf_norm(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// `L_ρ` and its gradient at `x` for the multipliers in `state`.
pub fn auglag_value_grad(p: &CompiledProblem, state: &AuglagState, x: &[f64]) -> Result<(f64, Vec<f64>), EvalError> {
    let r = p.residuals(x)?;
    let rho = state.rho;
    let mut value = r.f;
    let u: Vec<f64> = r.h.iter().zip(&state.lambda).map(|(h, l)| rho * h + l).collect();
    let v: Vec<f64> = r.g.iter().zip(&state.mu).map(|(g, m)| (rho * g + m).max(0.0)).collect();
    for ui in &u {
        value += ui * ui / (2.0 * rho);
    }
    for vi in &v {
        value += vi * vi / (2.0 * rho);
    }
    let grad = p.gradient(x, &u, &v)?;
    Ok((value, grad))
}

/// Double `ρ` unless the violation dropped below half its previous value.
pub fn update_rho(state: &mut AuglagState, violation_now: f64) {
    if violation_now > 0.5 * state.prev_violation {
        state.rho *= 2.0;
    }
    state.prev_violation = violation_now;
}

/// Residuals of the KKT conditions, recomputed from fresh evaluations.
pub fn kkt_residuals(p: &CompiledProblem, x: &[f64], lambda: &[f64], mu: &[f64]) -> Result<Kkt, EvalError> {
    let r = p.residuals(x)?;
    let grad = p.gradient(x, lambda, mu)?;
    let bounds = Bounds::new(p.lower.clone(), p.upper.clone());
    Ok(Kkt {
        stationarity: projected_gradient_norm(x, &grad, &bounds),
        eq_violation: inf_norm(r.h.iter().copied()),
        ineq_violation: inf_norm(r.g.iter().map(|g| g.max(0.0))),
        complementarity: inf_norm(r.g.iter().zip(mu).map(|(g, m)| g * m)),
    })
}

/// Run the outer loop from the problem's initial point.
pub fn solve(p: &CompiledProblem, opts: &AuglagOptions) -> Result<SolverReport, EvalError> {
    let mut state = AuglagState::new(p.x0.clone(), p.m, p.p);
    state.rho = opts.rho0;
    solve_from(p, state, opts)
}

/// Run the outer loop from a given state.
pub fn solve_from(p: &CompiledProblem, mut state: AuglagState, opts: &AuglagOptions) -> Result<SolverReport, EvalError> {
    let bounds = Bounds::new(p.lower.clone(), p.upper.clone());
    bounds.project(&mut state.x);
    let mut kkt = kkt_residuals(p, &state.x, &state.lambda, &state.mu)?;
    if state.prev_violation.is_infinite() {
        state.prev_violation = kkt.violation();
    }
    let mut history = Vec::new();
    let mut inner_total = 0;
    let mut stuck = 0;
    let mut status = SolveStatus::MaxOuter;

    for _ in 0..opts.max_outer {
        let inner_opts = LbfgsbOptions {
            history: opts.history,
            tol: opts.tol.max(0.1 * kkt.violation()),
            max_iter: opts.max_inner,
            ..LbfgsbOptions::default()
        };
        let snapshot = state.clone();
        let inner = minimize(
            |x| match auglag_value_grad(p, &snapshot, x) {
                Ok(v) => v,
                Err(_) => (f64::NAN, vec![f64::NAN; x.len()]),
            },
            &state.x,
            &bounds,
            &inner_opts,
        );
        inner_total += inner.iterations;
        if inner.status == InnerStatus::NumericError {
            status = SolveStatus::InnerFail;
            break;
        }
        stuck = if inner.status == InnerStatus::LineSearchFail && inner.iterations == 0 {
            stuck + 1
        } else {
            0
        };
        state.x = inner.x;

        let r = p.residuals(&state.x)?;
        for (l, h) in state.lambda.iter_mut().zip(&r.h) {
            *l += state.rho * h;
        }
        for (m, g) in state.mu.iter_mut().zip(&r.g) {
            *m = (*m + state.rho * g).max(0.0);
        }
        kkt = kkt_residuals(p, &state.x, &state.lambda, &state.mu)?;
        history.push(OuterRecord {
            violation: kkt.violation(),
            rho: state.rho,
            inner_iterations: inner.iterations,
            inner_status: inner.status,
        });
        if kkt.within(opts) {
            status = SolveStatus::Optimal;
            break;
        }
        if stuck >= 3 {
            status = SolveStatus::InnerFail;
            break;
        }
        update_rho(&mut state, kkt.violation());
        if state.rho > opts.rho_max {
            status = SolveStatus::Stalled;
            break;
        }
    }

    let f = p.residuals(&state.x)?.f;
    Ok(SolverReport {
        status,
        outer_iterations: history.len(),
        x: state.x,
        lambda: state.lambda,
        mu: state.mu,
        f,
        kkt,
        rho: state.rho,
        inner_iterations: inner_total,
        history,
    })
}
