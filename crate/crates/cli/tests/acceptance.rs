//! Acceptance suite. Runs as a plain binary (`harness = false`) and prints
//! one PASS/FAIL line per criterion. Pass criterion numbers as arguments
//! to run a subset: `cargo test --test acceptance -- 4 6`.

use nalgebra::{DMatrix, DVector};
use optmodel_cli::{export_instance, load_problem, RunConfig};
use optmodel_core::auglag::{
    auglag_value_grad, kkt_residuals, solve, solve_from, update_rho, AuglagOptions, AuglagState, SolveStatus,
    SolverReport,
};
use optmodel_core::corpus::{
    gen_compressed_sensing, gen_elasticnet, gen_logreg, gen_nnls, gen_nonlinear_ls, gen_svm, gen_symnmf,
    list_models, GeneratedInstance, NnlsVariant, GENERATORS,
};
use optmodel_core::eval::Env;
use optmodel_core::lbfgsb::{minimize, Bounds, InnerStatus, LbfgsbOptions};
use optmodel_core::parse_model;
use optmodel_core::reformulate::{build, CompileOptions, CompiledProblem};
use optmodel_core::report::Report;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::Command;
use std::time::Instant;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn rng(seed: u64) -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

fn normal(r: &mut ChaCha20Rng) -> f64 {
    r.sample(StandardNormal)
}

fn column(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn solve_instance(inst: &GeneratedInstance, opts: &AuglagOptions) -> (CompiledProblem, SolverReport) {
    let p = inst.build().expect("instance compiles");
    let r = solve(&p, opts).expect("solve runs");
    (p, r)
}

fn variable(p: &CompiledProblem, r: &SolverReport, name: &str) -> DMatrix<f64> {
    p.unpack(&r.x).get(name).expect("variable").clone()
}

// ---------------------------------------------------------------- 1

fn small_instance(model: &str, seed: u64) -> GeneratedInstance {
    match model {
        "logreg-l1" => gen_logreg(true, 30, 6, seed),
        "logreg-l2" => gen_logreg(false, 30, 6, seed),
        "svm" => gen_svm(false, 20, seed),
        "elastic-net" => gen_elasticnet(20, 8, seed),
        "nnls" => gen_nnls(NnlsVariant::I, 10, 20, seed),
        "symnmf" => gen_symnmf(8, 3, seed),
        "nonlinear-ls" => gen_nonlinear_ls(20, 5, seed),
        "compressed-sensing" => gen_compressed_sensing(8, 12, 3, seed),
        other => panic!("no small instance for {other}"),
    }
}

/// Central differences of `f` at `x`, compared with `grad` in the 2-norm
/// relative to `max(1, ‖fd‖)`.
fn fd_error(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], grad: &[f64]) -> f64 {
    let mut y = x.to_vec();
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..x.len() {
        let h = 6e-6 * x[i].abs().max(1.0);
        y[i] = x[i] + h;
        let fp = f(&y);
        y[i] = x[i] - h;
        let fm = f(&y);
        y[i] = x[i];
        let d = (fp - fm) / (2.0 * h);
        num += (d - grad[i]).powi(2);
        den += d * d;
    }
    num.sqrt() / den.sqrt().max(1.0)
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut r = rng(11);
    for m in list_models() {
        let p = small_instance(m.name, 5).build().map_err(|e| format!("{}: {e}", m.name))?;
        for _ in 0..10 {
            let x: Vec<f64> = (0..p.n).map(|_| normal(&mut r)).collect();
            let u: Vec<f64> = (0..p.m).map(|_| normal(&mut r)).collect();
            let v: Vec<f64> = (0..p.p).map(|_| normal(&mut r)).collect();
            let phi = |x: &[f64]| {
                let res = p.residuals(x).unwrap();
                res.f + res.h.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>()
                    + res.g.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>()
            };
            let e = fd_error(phi, &x, &p.gradient(&x, &u, &v).unwrap());
            ensure!(e <= 1e-6, "{}: smooth part gradient error {e:.2e}", m.name);
            worst = worst.max(e);

            let mut state = AuglagState::new(x.clone(), p.m, p.p);
            state.lambda = u.clone();
            state.mu = v.iter().map(|v| v.abs()).collect();
            state.rho = 10f64.powi(r.random_range(0..3));
            let (_, g) = auglag_value_grad(&p, &state, &x).unwrap();
            let e = fd_error(|y| auglag_value_grad(&p, &state, y).unwrap().0, &x, &g);
            ensure!(e <= 1e-6, "{}: augmented Lagrangian gradient error {e:.2e}", m.name);
            worst = worst.max(e);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 10.0, "took {secs:.1} s");
    Ok(format!("8 models x 10 points, worst relative error {worst:.1e}"))
}

// ---------------------------------------------------------------- 2

struct Quadratic {
    a: DMatrix<f64>,
    b: DVector<f64>,
}

impl Quadratic {
    fn random(n: usize, r: &mut ChaCha20Rng) -> Self {
        let q = DMatrix::from_fn(n, n, |_, _| normal(r));
        let a = q.transpose() * &q / n as f64 + DMatrix::identity(n, n) * 0.1;
        let b = DVector::from_fn(n, |_, _| 2.0 * normal(r));
        Quadratic { a, b }
    }

    fn value(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.a * x)) - self.b.dot(x)
    }

    /// Minimum over the box by trying every assignment of each coordinate
    /// to its lower bound, its upper bound or free.
    fn box_oracle(&self, lo: &[f64], hi: &[f64]) -> f64 {
        let n = lo.len();
        let mut best = f64::INFINITY;
        let mut code = vec![0u8; n];
        loop {
            let free: Vec<usize> = (0..n).filter(|&i| code[i] == 2).collect();
            let mut x = DVector::from_fn(n, |i, _| match code[i] {
                0 => lo[i],
                1 => hi[i],
                _ => 0.0,
            });
            let mut feasible = true;
            if !free.is_empty() {
                let aff = DMatrix::from_fn(free.len(), free.len(), |i, j| self.a[(free[i], free[j])]);
                let rhs = DVector::from_fn(free.len(), |i, _| {
                    let k = free[i];
                    self.b[k] - (0..n).filter(|j| code[*j] != 2).map(|j| self.a[(k, j)] * x[j]).sum::<f64>()
                });
                let sol = aff.cholesky().expect("positive definite").solve(&rhs);
                for (i, &k) in free.iter().enumerate() {
                    x[k] = sol[i];
                    feasible &= lo[k] <= sol[i] && sol[i] <= hi[k];
                }
            }
            if feasible {
                best = best.min(self.value(&x));
            }
            let mut k = 0;
            while k < n && code[k] == 2 {
                code[k] = 0;
                k += 1;
            }
            if k == n {
                return best;
            }
            code[k] += 1;
        }
    }
}

fn quadratic_oracles() -> Outcome {
    let mut r = rng(22);
    let opts = LbfgsbOptions {
        tol: 1e-10,
        ..Default::default()
    };
    let mut worst: f64 = 0.0;
    let mut max_excess = i64::MIN;
    for k in 0..20 {
        let boxed = k % 2 == 0;
        let n = if boxed {
            r.random_range(2..=9)
        } else if k % 4 == 1 {
            r.random_range(2..=10)
        } else {
            r.random_range(11..=30)
        };
        let q = Quadratic::random(n, &mut r);
        let (lo, hi, oracle) = if boxed {
            let lo: Vec<f64> = (0..n).map(|_| -r.random_range(0.1..1.0)).collect();
            let hi: Vec<f64> = (0..n).map(|_| r.random_range(0.1..1.0)).collect();
            let f = q.box_oracle(&lo, &hi);
            (lo, hi, f)
        } else {
            let x = q.a.clone().cholesky().unwrap().solve(&q.b);
            (vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n], q.value(&x))
        };
        let x0: Vec<f64> = (0..n).map(|_| normal(&mut r)).collect();
        let res = minimize(
            |x| {
                let x = DVector::from_column_slice(x);
                (q.value(&x), (&q.a * &x - &q.b).as_slice().to_vec())
            },
            &x0,
            &Bounds::new(lo, hi),
            &opts,
        );
        ensure!(res.status == InnerStatus::Converged, "quadratic {k} (n={n}): {:?}", res.status);
        let gap = (res.f - oracle).abs() / oracle.abs().max(1.0);
        ensure!(gap <= 1e-8, "quadratic {k} (n={n}, boxed={boxed}): gap {gap:.2e}");
        worst = worst.max(gap);
        if !boxed && n <= 10 {
            let excess = res.iterations as i64 - (n as i64 + 2);
            ensure!(excess <= 0, "unconstrained n={n} took {} iterations", res.iterations);
            max_excess = max_excess.max(res.iterations as i64 - n as i64);
        }
    }
    Ok(format!("20 quadratics, worst gap {worst:.1e}, unconstrained iterations at most dim{max_excess:+} (limit dim+2)"))
}

// ---------------------------------------------------------------- 3

fn problem(src: &str) -> CompiledProblem {
    build(&parse_model(src).unwrap(), &Env::new(), &CompileOptions::default()).unwrap()
}

fn hand_kkt() -> Outcome {
    let tight = AuglagOptions {
        tol: 1e-10,
        feas_tol: 1e-10,
        comp_tol: 1e-10,
        ..Default::default()
    };
    let p = problem("variables Scalar x min x^2 st x == 1");
    let r = solve(&p, &tight).unwrap();
    ensure!(r.status == SolveStatus::Optimal, "x^2 | x = 1: {:?}", r.status);
    ensure!((r.x[0] - 1.0).abs() <= 1e-8 && (r.lambda[0] + 2.0).abs() <= 1e-8, "x^2 | x = 1: x {} lambda {}", r.x[0], r.lambda[0]);

    let p = problem("variables Scalar x min (x - 2)^2 st x <= 1 + 0 * x");
    let r = solve(&p, &tight).unwrap();
    ensure!(r.status == SolveStatus::Optimal, "(x-2)^2 | x <= 1: {:?}", r.status);
    ensure!((r.x[0] - 1.0).abs() <= 1e-8 && (r.mu[0] - 2.0).abs() <= 1e-8, "(x-2)^2 | x <= 1: x {} mu {}", r.x[0], r.mu[0]);

    // One outer step from a chosen state: multiplier updates verbatim.
    let p = problem("variables Scalar x Scalar y min (x - 2)^2 + (y - 1)^2 st x + y == 1 x - y <= 0 + 0 * x");
    let one = AuglagOptions {
        max_outer: 1,
        ..tight
    };
    for (prev, doubled) in [(1e-12, true), (1e12, false)] {
        let mut s = AuglagState::new(vec![0.0, 0.0], 1, 1);
        s.lambda = vec![0.3];
        s.mu = vec![0.2];
        s.rho = 4.0;
        s.prev_violation = prev;
        let r = solve_from(&p, s, &one).unwrap();
        let res = p.residuals(&r.x).unwrap();
        ensure!(r.lambda[0] == 0.3 + 4.0 * res.h[0], "lambda update {} vs {}", r.lambda[0], 0.3 + 4.0 * res.h[0]);
        ensure!(r.mu[0] == (0.2 + 4.0 * res.g[0]).max(0.0), "mu update {} vs {}", r.mu[0], (0.2 + 4.0 * res.g[0]).max(0.0));
        let want = if doubled { 8.0 } else { 4.0 };
        ensure!(r.rho == want, "rho {} after one step, expected {want}", r.rho);
    }

    // The rule over a whole run: ρ doubles exactly when the violation did
    // not halve.
    let p = problem(
        "variables Scalar x Scalar y Scalar z min exp(x) + exp(y) + exp(z) + x^2 + y^2 + z^2 \
         st x + y + z == 2 x - y <= -1",
    );
    let start = p.x0.clone();
    let r = solve(&p, &AuglagOptions::default()).unwrap();
    let mut prev = kkt_residuals(&p, &start, &vec![0.0; p.m], &vec![0.0; p.p]).unwrap().violation();
    for w in r.history.windows(2) {
        let expect = if w[0].violation > 0.5 * prev { 2.0 * w[0].rho } else { w[0].rho };
        ensure!(w[1].rho == expect, "rho {} -> {} with violation {} after {}", w[0].rho, w[1].rho, w[0].violation, prev);
        prev = w[0].violation;
    }
    let mut s = AuglagState::new(vec![], 0, 0);
    s.prev_violation = 1.0;
    update_rho(&mut s, 0.5);
    ensure!(s.rho == 1.0, "violation exactly halved must keep rho");
    update_rho(&mut s, 0.26);
    ensure!(s.rho == 2.0, "violation above half must double rho");
    Ok(format!("lambda* = -2, mu* = 2 to 1e-8; update rules exact over {} outer steps", r.history.len()))
}

// ---------------------------------------------------------------- 4

fn compressed_sensing() -> Outcome {
    let start = Instant::now();
    let inst = gen_compressed_sensing(150, 200, 15, 7);
    let opts = AuglagOptions {
        feas_tol: 1e-8,
        ..Default::default()
    };
    let (p, r) = solve_instance(&inst, &opts);
    let secs = start.elapsed().as_secs_f64();
    ensure!(r.status == SolveStatus::Optimal, "status {:?}", r.status);
    let x = variable(&p, &r, "x");
    let truth = inst.truth.get("x").unwrap();
    let a = inst.data.get("A").unwrap();
    let b = inst.data.get("b").unwrap();
    let err = (&x - truth).amax();
    let resid = (a * &x - b).norm();
    ensure!(err <= 1e-5, "|x - x*|_inf = {err:.2e}");
    ensure!(resid <= 1e-6, "|Ax - b|_2 = {resid:.2e}");
    ensure!(secs < 5.0, "took {secs:.2} s");
    Ok(format!("|x - x*|_inf {err:.1e}, |Ax - b| {resid:.1e}, {secs:.2} s"))
}

// ---------------------------------------------------------------- 5

fn svm_box() -> Outcome {
    let inst = gen_svm(true, 200, 1);
    let opts = AuglagOptions {
        feas_tol: 1e-7,
        ..Default::default()
    };
    let (p, r) = solve_instance(&inst, &opts);
    ensure!(r.status == SolveStatus::Optimal, "status {:?}", r.status);
    let a = variable(&p, &r, "a");
    let k = inst.data.get("K").unwrap();
    let y = inst.data.get("y").unwrap();
    let c = inst.data.get("c").unwrap()[(0, 0)];
    ensure!(a.iter().all(|&v| (0.0..=c).contains(&v)), "box violated");
    let balance = y.dot(&a).abs();
    ensure!(balance <= 1e-6, "|y'a| = {balance:.2e}");
    // Dual stationarity of 1/2 (a.y)'K(a.y) - sum(a) + nu y'a over [0, c].
    let ya = a.component_mul(y);
    let nu = r.lambda[0];
    let grad = (k * &ya).component_mul(y).add_scalar(-1.0) + y * nu;
    let mut worst: f64 = 0.0;
    for i in 0..a.len() {
        let g = grad[i];
        let residual = if a[i] <= 0.0 {
            (-g).max(0.0)
        } else if a[i] >= c {
            g.max(0.0)
        } else {
            g.abs()
        };
        worst = worst.max(residual);
    }
    ensure!(worst <= 1e-4, "stationarity {worst:.2e}");
    let at_bounds = a.iter().filter(|&&v| v == 0.0 || v == c).count();
    Ok(format!("m=200, stationarity {worst:.1e}, |y'a| {balance:.1e}, {at_bounds} multipliers at 0 or C"))
}

// ---------------------------------------------------------------- 6

struct ElasticNet {
    x: DMatrix<f64>,
    y: DVector<f64>,
    n: f64,
    a1: f64,
    a2: f64,
}

impl ElasticNet {
    fn value(&self, w: &DVector<f64>) -> f64 {
        self.n * (&self.x * w - &self.y).norm_squared() + self.a1 * w.lp_norm(1) + self.a2 * w.norm_squared()
    }

    /// Cyclic coordinate descent with exact soft-thresholded updates.
    fn coordinate_descent(&self) -> DVector<f64> {
        let cols = self.x.ncols();
        let sq: Vec<f64> = (0..cols).map(|j| self.x.column(j).norm_squared()).collect();
        let mut w = DVector::zeros(cols);
        let mut resid = self.y.clone();
        for _ in 0..100_000 {
            let mut change: f64 = 0.0;
            for j in 0..cols {
                let old = w[j];
                let rho: f64 = 2.0 * self.n * (self.x.column(j).dot(&resid) + sq[j] * old);
                let shrunk = rho.signum() * (rho.abs() - self.a1).max(0.0);
                let new = shrunk / (2.0 * self.n * sq[j] + 2.0 * self.a2);
                if new != old {
                    resid.axpy(old - new, &self.x.column(j), 1.0);
                    w[j] = new;
                    change = change.max((new - old).abs());
                }
            }
            if change < 1e-15 {
                break;
            }
        }
        w
    }
}

fn elastic_net() -> Outcome {
    let inst = gen_elasticnet(200, 200, 1);
    let scalar = |k: &str| inst.data.get(k).unwrap()[(0, 0)];
    let en = ElasticNet {
        x: inst.data.get("X").unwrap().clone(),
        y: DVector::from_column_slice(inst.data.get("y").unwrap().as_slice()),
        n: scalar("n"),
        a1: scalar("a1"),
        a2: scalar("a2"),
    };
    let oracle = en.value(&en.coordinate_descent());
    let opts = AuglagOptions {
        tol: 1e-9,
        feas_tol: 1e-10,
        comp_tol: 1e-9,
        ..Default::default()
    };
    let (p, r) = solve_instance(&inst, &opts);
    ensure!(r.status == SolveStatus::Optimal, "status {:?}", r.status);
    let w = variable(&p, &r, "w");
    let f = en.value(&DVector::from_column_slice(w.as_slice()));
    let gap = (f - oracle).abs();
    ensure!(gap <= 1e-8, "objective {f} vs coordinate descent {oracle}: gap {gap:.2e}");
    let nnz = w.iter().filter(|v| v.abs() > 1e-8).count();
    Ok(format!("objective {f:.10} vs oracle {oracle:.10}, gap {gap:.1e}, {nnz} non-zeros"))
}

// ---------------------------------------------------------------- 7

fn symnmf() -> Outcome {
    let inst = gen_symnmf(50, 5, 3);
    let (p, r) = solve_instance(&inst, &AuglagOptions::default());
    ensure!(r.status == SolveStatus::Optimal, "status {:?}", r.status);
    let u = variable(&p, &r, "U");
    ensure!(u.iter().all(|&v| v >= 0.0), "negative entry in U");
    let t = inst.data.get("X").unwrap();
    let err = (t - &u * u.transpose()).norm_squared();
    ensure!(err <= 1e-6, "|T - UU'|^2 = {err:.2e}");
    Ok(format!("|T - UU'|^2 = {err:.1e}, U >= 0"))
}

// ---------------------------------------------------------------- 8

fn nnls() -> Outcome {
    let mut out = Vec::new();
    for (variant, m, n) in [(NnlsVariant::I, 100, 300), (NnlsVariant::Ii, 300, 150)] {
        let inst = gen_nnls(variant, m, n, 1);
        let opts = AuglagOptions {
            tol: 1e-8,
            ..Default::default()
        };
        let (p, r) = solve_instance(&inst, &opts);
        ensure!(r.status == SolveStatus::Optimal, "{variant:?}: status {:?}", r.status);
        let x = variable(&p, &r, "x");
        let a = inst.data.get("A").unwrap();
        let b = inst.data.get("b").unwrap();
        let grad = a.transpose() * (a * &x - b) * 2.0;
        ensure!(x.iter().all(|&v| v >= 0.0), "{variant:?}: negative entry");
        let mut worst: f64 = 0.0;
        for i in 0..x.len() {
            if x[i] == 0.0 {
                ensure!(grad[i] >= -1e-6, "{variant:?}: gradient {} at active {i}", grad[i]);
            }
            let c = (x[i] * grad[i]).abs();
            ensure!(c <= 1e-6, "{variant:?}: x_i grad_i = {c:.2e} at {i}");
            worst = worst.max(c);
        }
        let active = x.iter().filter(|&&v| v == 0.0).count();
        out.push(format!("{variant:?} {m}x{n}: {active} active, max |x_i g_i| {worst:.1e}"));
    }
    Ok(out.join("; "))
}

// ---------------------------------------------------------------- 9

/// `min ‖Ax − b‖² + λ Σ|x − d|` over a box.
struct L1Problem {
    a: DMatrix<f64>,
    b: DVector<f64>,
    lam: f64,
    d: DVector<f64>,
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl L1Problem {
    fn value(&self, x: &DVector<f64>) -> f64 {
        (&self.a * x - &self.b).norm_squared() + self.lam * (x - &self.d).lp_norm(1)
    }

    fn smooth_grad(&self, x: &DVector<f64>) -> DVector<f64> {
        self.a.transpose() * (&self.a * x - &self.b) * 2.0
    }

    /// Projected subgradient with steps `2/(μ(k+1))`; returns the best
    /// iterate.
    fn subgradient(&self, iters: usize) -> DVector<f64> {
        let n = self.d.len();
        let mu = 2.0 * (self.a.transpose() * &self.a).symmetric_eigenvalues().min();
        let mut x = DVector::zeros(n);
        let mut best = x.clone();
        let mut best_f = self.value(&x);
        for k in 0..iters {
            let sign = (&x - &self.d).map(|v| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 });
            let g = self.smooth_grad(&x) + sign * self.lam;
            x -= g * (2.0 / (mu * (k as f64 + 1.0)));
            for i in 0..n {
                x[i] = x[i].clamp(self.lo[i], self.hi[i]);
            }
            let f = self.value(&x);
            if f < best_f {
                best_f = f;
                best = x.clone();
            }
        }
        best
    }

    /// First-order optimality of `x`: some element of the subdifferential
    /// plus the box normal cone contains zero.
    fn certify(&self, x: &DVector<f64>, tol: f64) -> bool {
        let q = self.smooth_grad(x);
        (0..x.len()).all(|i| {
            let (mut lo, mut hi) = if x[i] == self.d[i] {
                (q[i] - self.lam, q[i] + self.lam)
            } else {
                let s = q[i] + self.lam * (x[i] - self.d[i]).signum();
                (s, s)
            };
            if x[i] == self.lo[i] {
                lo = f64::NEG_INFINITY;
            }
            if x[i] == self.hi[i] {
                hi = f64::INFINITY;
            }
            lo <= tol && hi >= -tol
        })
    }

    /// Guess the active pattern of `approx` at threshold `delta`, solve the
    /// resulting smooth problem exactly and keep it if it certifies.
    fn polish(&self, approx: &DVector<f64>, delta: f64) -> Option<DVector<f64>> {
        let n = approx.len();
        let mut x = approx.clone();
        let mut free = Vec::new();
        for i in 0..n {
            if approx[i] - self.lo[i] < delta {
                x[i] = self.lo[i];
            } else if self.hi[i] - approx[i] < delta {
                x[i] = self.hi[i];
            } else if (approx[i] - self.d[i]).abs() < delta {
                x[i] = self.d[i];
            } else {
                free.push(i);
            }
        }
        if !free.is_empty() {
            let af = DMatrix::from_fn(self.a.nrows(), free.len(), |r, c| self.a[(r, free[c])]);
            let mut fixed = x.clone();
            for &i in &free {
                fixed[i] = 0.0;
            }
            let rest = &self.b - &self.a * fixed;
            let sign = DVector::from_fn(free.len(), |k, _| (approx[free[k]] - self.d[free[k]]).signum());
            let rhs = af.transpose() * rest * 2.0 - sign * self.lam;
            let sol = (af.transpose() * &af * 2.0).cholesky()?.solve(&rhs);
            for (k, &i) in free.iter().enumerate() {
                let s = (approx[i] - self.d[i]).signum();
                if sol[k] <= self.lo[i] || sol[k] >= self.hi[i] || (sol[k] - self.d[i]).signum() != s {
                    return None;
                }
                x[i] = sol[k];
            }
        }
        self.certify(&x, 1e-9).then_some(x)
    }

    fn oracle(&self) -> Option<DVector<f64>> {
        let approx = self.subgradient(200_000);
        [1e-1, 3e-2, 1e-2, 3e-3, 1e-3, 1e-4, 1e-5, 1e-6]
            .iter()
            .find_map(|&delta| self.polish(&approx, delta))
    }
}

fn epigraph_equivalence() -> Outcome {
    let mut r = rng(99);
    let mut worst: f64 = 0.0;
    for k in 0..10 {
        let n = r.random_range(3..=10);
        let m = n + 2;
        let shifted = k % 2 == 1;
        let prob = L1Problem {
            a: DMatrix::from_fn(m, n, |_, _| normal(&mut r)),
            b: DVector::from_fn(m, |_, _| normal(&mut r)),
            lam: r.random_range(0.5..4.0),
            d: DVector::from_fn(n, |_, _| if shifted { 0.3 * normal(&mut r) } else { 0.0 }),
            lo: DVector::from_fn(n, |_, _| -r.random_range(0.2..1.0)),
            hi: DVector::from_fn(n, |_, _| r.random_range(0.2..1.0)),
        };
        let Some(xo) = prob.oracle() else {
            return Err(format!("problem {k}: subgradient oracle could not certify an optimum"));
        };
        let src = if shifted {
            "parameters Matrix A Vector b Scalar lam Vector d Vector lo Vector hi \
             variables Vector x min norm2(A*x - b).^2 + lam * sum(abs(x - d)) st x >= lo x <= hi"
        } else {
            "parameters Matrix A Vector b Scalar lam Vector lo Vector hi \
             variables Vector x min norm2(A*x - b).^2 + lam * norm1(x) st x >= lo x <= hi"
        };
        let mut data = Env::new();
        data.set("A", prob.a.clone())
            .set("b", column(&prob.b))
            .set_scalar("lam", prob.lam)
            .set("lo", column(&prob.lo))
            .set("hi", column(&prob.hi));
        if shifted {
            data.set("d", column(&prob.d));
        }
        let p = build(&parse_model(src).unwrap(), &data, &CompileOptions::default()).map_err(|e| e.to_string())?;
        let opts = AuglagOptions {
            tol: 1e-8,
            feas_tol: 1e-9,
            comp_tol: 1e-8,
            ..Default::default()
        };
        let res = solve(&p, &opts).unwrap();
        ensure!(res.status == SolveStatus::Optimal, "problem {k}: status {:?}", res.status);
        let x = variable(&p, &res, "x");
        let f = prob.value(&DVector::from_column_slice(x.as_slice()));
        let fo = prob.value(&xo);
        let gap = (f - fo).abs();
        ensure!(gap <= 1e-6, "problem {k} (n={n}): {f} vs oracle {fo}");
        worst = worst.max(gap);
    }
    Ok(format!("10 problems, worst objective gap {worst:.1e}"))
}

// ---------------------------------------------------------------- 10

fn end_to_end_cli() -> Outcome {
    let start = Instant::now();
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut lines = Vec::new();
    for name in GENERATORS {
        let sub = dir.path().join(name);
        let run = export_instance(name, 1, &sub).map_err(|e| e.to_string())?;
        let report_path = sub.join("report.json");
        let out = Command::new(env!("CARGO_BIN_EXE_optmodel"))
            .args(["solve", "--config"])
            .arg(&run)
            .arg("--out")
            .arg(&report_path)
            .env_remove("OPTMODEL_CONFIG")
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(
            out.status.code() == Some(0),
            "{name}: exit {:?}: {}",
            out.status.code(),
            String::from_utf8_lossy(&out.stderr)
        );
        let report = Report::from_json(&std::fs::read_to_string(&report_path).unwrap()).map_err(|e| e.to_string())?;
        let problem = load_problem(&RunConfig::from_file(&run).unwrap()).map_err(|e| e.to_string())?;
        let kkt = report.recheck(&problem).map_err(|e| e.to_string())?;
        let tol = &report.tolerances;
        ensure!(
            kkt.stationarity <= tol.tol
                && kkt.eq_violation <= tol.feas_tol
                && kkt.ineq_violation <= tol.feas_tol
                && kkt.complementarity <= tol.comp_tol,
            "{name}: recheck failed {kkt:?}"
        );
        let (x, _, _) = report.primal_dual(&problem);
        let f = problem.user_objective_value(&x).unwrap();
        ensure!(
            (f - report.objective).abs() <= 1e-12 * f.abs().max(1.0),
            "{name}: objective {f} vs reported {}",
            report.objective
        );
        lines.push(name);
    }
    let secs = start.elapsed().as_secs_f64();
    ensure!(secs < 120.0, "took {secs:.1} s");
    Ok(format!("{} instances, exit 0 and KKT recheck, {secs:.1} s", lines.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("gradient suite", gradient_suite),
        ("L-BFGS-B quadratic oracles", quadratic_oracles),
        ("outer loop updates, hand KKT", hand_kkt),
        ("compressed sensing recovery", compressed_sensing),
        ("SVM dual with box", svm_box),
        ("elastic net vs coordinate descent", elastic_net),
        ("symmetric NMF", symnmf),
        ("NNLS KKT, both variants", nnls),
        ("epigraph equivalence", epigraph_equivalence),
        ("end-to-end CLI", end_to_end_cli),
    ];
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        if !only.is_empty() && !only.contains(&(i + 1)) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name} ({secs:.2} s): {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name} ({secs:.2} s): {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
