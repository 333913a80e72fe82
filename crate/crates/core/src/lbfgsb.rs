//! L-BFGS-B: limited-memory BFGS under box constraints.
//!
//! Each iteration computes the generalized Cauchy point along the projected
//! steepest-descent path of the quasi-Newton model, minimizes the model over
//! the variables that stay free, and runs a strong-Wolfe line search
//! (Moré–Thuente) towards the resulting point. The Hessian approximation is
//! kept in compact form `B = θI − W M W'` with `W = [Y, θS]`.

use nalgebra::{DMatrix, DVector};
use std::collections::VecDeque;

/// Per-coordinate bounds; infinities mean "unbounded".
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len());
        debug_assert!(lower.iter().zip(&upper).all(|(l, u)| l <= u));
        Bounds { lower, upper }
    }

    pub fn unbounded(n: usize) -> Self {
        Bounds::new(vec![f64::NEG_INFINITY; n], vec![f64::INFINITY; n])
    }

    pub fn uniform(n: usize, lower: f64, upper: f64) -> Self {
        Bounds::new(vec![lower; n], vec![upper; n])
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn project(&self, x: &mut [f64]) {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = xi.clamp(self.lower[i], self.upper[i]);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().enumerate().all(|(i, &xi)| self.lower[i] <= xi && xi <= self.upper[i])
    }
}

/// Projected gradient: components pushing out of an active bound are zero.
pub fn projected_gradient(x: &[f64], g: &[f64], b: &Bounds) -> Vec<f64> {
    x.iter()
        .zip(g)
        .enumerate()
        .map(|(i, (&xi, &gi))| {
            if (xi <= b.lower[i] && gi > 0.0) || (xi >= b.upper[i] && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

pub fn projected_gradient_norm(x: &[f64], g: &[f64], b: &Bounds) -> f64 {
    projected_gradient(x, g, b).iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Correction pairs and the compact representation built from them.
#[derive(Debug, Clone)]
pub struct Memory {
    capacity: usize,
    s: VecDeque<DVector<f64>>,
    y: VecDeque<DVector<f64>>,
    theta: f64,
    w: DMatrix<f64>,
    m: DMatrix<f64>,
    n: usize,
}

/// Pairs with `s'y <= CURVATURE_EPS * |s| |y|` are skipped.
pub const CURVATURE_EPS: f64 = 1e-10;

impl Memory {
    pub fn new(n: usize, capacity: usize) -> Self {
        Memory {
            capacity: capacity.max(1),
            s: VecDeque::new(),
            y: VecDeque::new(),
            theta: 1.0,
            w: DMatrix::zeros(n, 0),
            m: DMatrix::zeros(0, 0),
            n,
        }
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&DVector<f64>, &DVector<f64>)> {
        self.s.iter().zip(&self.y)
    }

    pub fn clear(&mut self) {
        *self = Memory::new(self.n, self.capacity);
    }

    /// Store `(s, y)` if it has positive curvature. Returns whether it was
    /// stored.
    pub fn push(&mut self, s: DVector<f64>, y: DVector<f64>) -> bool {
        let sy = s.dot(&y);
        if !(sy > CURVATURE_EPS * s.norm() * y.norm()) || !sy.is_finite() {
            return false;
        }
        if self.s.len() == self.capacity {
            self.s.pop_front();
            self.y.pop_front();
        }
        self.theta = y.norm_squared() / sy;
        self.s.push_back(s);
        self.y.push_back(y);
        if !self.rebuild() {
            self.clear();
            return false;
        }
        true
    }

    fn rebuild(&mut self) -> bool {
        let k = self.s.len();
        let mut w = DMatrix::zeros(self.n, 2 * k);
        for j in 0..k {
            w.set_column(j, &self.y[j]);
            w.set_column(k + j, &(&self.s[j] * self.theta));
        }
        let mut a = DMatrix::zeros(2 * k, 2 * k);
        for i in 0..k {
            for j in 0..k {
                let sy = self.s[i].dot(&self.y[j]);
                if i == j {
                    a[(i, i)] = -sy;
                } else if i > j {
                    a[(k + i, j)] = sy;
                    a[(j, k + i)] = sy;
                }
                a[(k + i, k + j)] = self.theta * self.s[i].dot(&self.s[j]);
            }
        }
        match a.try_inverse() {
            Some(m) if m.iter().all(|v| v.is_finite()) => {
                self.w = w;
                self.m = m;
                true
            }
            _ => false,
        }
    }

    /// `B v` for the current approximation.
    pub fn hess_vec(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = v * self.theta;
        if !self.is_empty() {
            out -= &self.w * (&self.m * self.w.tr_mul(v));
        }
        out
    }
}

/// Result of the generalized Cauchy point search.
#[derive(Debug, Clone)]
pub struct CauchyPoint {
    pub x: Vec<f64>,
    /// Variables not fixed at a bound at the Cauchy point.
    pub free: Vec<bool>,
    /// `W'(x_cp − x)`, reused by the subspace step.
    pub c: DVector<f64>,
}

/// First local minimizer of the quadratic model along the projected
/// gradient path.
pub fn cauchy_point(x: &[f64], g: &[f64], mem: &Memory, b: &Bounds) -> CauchyPoint {
    let n = x.len();
    let theta = mem.theta;
    let k2 = mem.w.ncols();
    let mut t = vec![f64::INFINITY; n];
    let mut d = DVector::zeros(n);
    for i in 0..n {
        if g[i] < 0.0 {
            t[i] = (x[i] - b.upper[i]) / g[i];
        } else if g[i] > 0.0 {
            t[i] = (x[i] - b.lower[i]) / g[i];
        }
        if t[i] > 0.0 {
            d[i] = -g[i];
        } else {
            t[i] = 0.0;
        }
    }
    let mut order: Vec<usize> = (0..n).filter(|&i| t[i] > 0.0 && t[i].is_finite()).collect();
    order.sort_by(|&a, &c| t[a].total_cmp(&t[c]));

    let mut xcp = x.to_vec();
    let mut p = mem.w.tr_mul(&d);
    let mut c = DVector::zeros(k2);
    let mut fp = -d.norm_squared();
    if fp == 0.0 {
        return CauchyPoint {
            x: xcp,
            free: t.iter().map(|&ti| ti > 0.0).collect(),
            c,
        };
    }
    let mp = |v: &DVector<f64>| if k2 == 0 { DVector::zeros(0) } else { &mem.m * v };
    let mut fpp = -theta * fp - p.dot(&mp(&p));
    let fpp0 = fpp.abs();
    let mut dt_min = -fp / fpp.max(f64::EPSILON * fpp0);
    let mut t_old = 0.0;
    let mut passed = 0;
    for &bi in &order {
        let dt = t[bi] - t_old;
        if dt_min < dt {
            break;
        }
        let zb = if d[bi] > 0.0 { b.upper[bi] } else { b.lower[bi] };
        xcp[bi] = zb;
        let z = zb - x[bi];
        c += &p * dt;
        let gb = g[bi];
        let wb: DVector<f64> = mem.w.row(bi).transpose();
        let mwb = mp(&wb);
        fp += dt * fpp + gb * gb + theta * gb * z - gb * mwb.dot(&c);
        fpp += -theta * gb * gb - 2.0 * gb * mwb.dot(&p) - gb * gb * mwb.dot(&wb);
        fpp = fpp.max(f64::EPSILON * fpp0);
        p += &wb * gb;
        d[bi] = 0.0;
        dt_min = -fp / fpp;
        t_old = t[bi];
        passed += 1;
    }
    let dt_min = dt_min.max(0.0);
    let t_final = t_old + dt_min;
    for i in 0..n {
        if d[i] != 0.0 {
            xcp[i] = (x[i] + t_final * d[i]).clamp(b.lower[i], b.upper[i]);
        }
    }
    c += &p * dt_min;
    let mut free = vec![true; n];
    for (i, f) in free.iter_mut().enumerate() {
        if t[i] == 0.0 {
            *f = false;
        }
    }
    for &bi in order.iter().take(passed) {
        free[bi] = false;
    }
    CauchyPoint { x: xcp, free, c }
}

/// Minimize the quadratic model over the free variables starting from the
/// Cauchy point, then bring the result back into the box.
pub fn subspace_min(x: &[f64], g: &[f64], cp: &CauchyPoint, mem: &Memory, b: &Bounds) -> Vec<f64> {
    let free: Vec<usize> = (0..x.len()).filter(|&i| cp.free[i]).collect();
    if free.is_empty() {
        return cp.x.clone();
    }
    let theta = mem.theta;
    let k2 = mem.w.ncols();
    let mc = if k2 == 0 { DVector::zeros(0) } else { &mem.m * &cp.c };
    let wz = mem.w.select_rows(&free);
    let mut r = DVector::zeros(free.len());
    for (j, &i) in free.iter().enumerate() {
        r[j] = g[i] + theta * (cp.x[i] - x[i]);
        if k2 > 0 {
            r[j] -= mem.w.row(i).dot(&mc.transpose());
        }
    }
    let mut dz = -&r / theta;
    if k2 > 0 {
        let v = &mem.m * wz.tr_mul(&r);
        let nmat = DMatrix::identity(k2, k2) - (&mem.m * wz.tr_mul(&wz)) / theta;
        if let Some(v) = nmat.lu().solve(&v) {
            dz -= (&wz * v) / (theta * theta);
        }
    }
    let mut clipped = cp.x.clone();
    let mut raw = cp.x.clone();
    for (j, &i) in free.iter().enumerate() {
        raw[i] = cp.x[i] + dz[j];
        clipped[i] = raw[i].clamp(b.lower[i], b.upper[i]);
    }
    let slope: f64 = clipped.iter().zip(x).zip(g).map(|((c, xi), gi)| (c - xi) * gi).sum();
    if slope < 0.0 {
        return clipped;
    }
    let mut alpha: f64 = 1.0;
    for (j, &i) in free.iter().enumerate() {
        let step = dz[j];
        if step > 0.0 {
            alpha = alpha.min((b.upper[i] - cp.x[i]) / step);
        } else if step < 0.0 {
            alpha = alpha.min((b.lower[i] - cp.x[i]) / step);
        }
    }
    let alpha = alpha.max(0.0);
    let mut out = cp.x.clone();
    for (j, &i) in free.iter().enumerate() {
        out[i] = (cp.x[i] + alpha * dz[j]).clamp(b.lower[i], b.upper[i]);
    }
    out
}

/// Relative size of objective changes treated as rounding noise.
pub const ROUNDING: f64 = 1e-12;

/// Strong-Wolfe parameters for [`line_search`].
#[derive(Debug, Clone, Copy)]
pub struct WolfeParams {
    pub c1: f64,
    pub c2: f64,
    pub xtol: f64,
    pub max_evals: usize,
}

impl Default for WolfeParams {
    fn default() -> Self {
        WolfeParams {
            c1: 1e-4,
            c2: 0.9,
            xtol: 1e-10,
            max_evals: 20,
        }
    }
}

/// Outcome of a line search: the accepted step and `φ(α)`, `φ'(α)` there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub alpha: f64,
    pub f: f64,
    pub slope: f64,
    pub evals: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LineSearchError {
    /// No acceptable step within the evaluation budget.
    Exhausted,
    /// `d` is not a descent direction.
    NotDescent,
}

/// Moré–Thuente search for a step satisfying the strong Wolfe conditions
/// on `φ(α) = f(x + αd)`, with `α ∈ (0, alpha_max]`. `phi` returns `None`
/// (or non-finite values) where `f` is undefined; such trial steps are
/// halved until defined, and the search continues below them.
pub fn line_search(
    mut phi: impl FnMut(f64) -> Option<(f64, f64)>,
    f0: f64,
    slope0: f64,
    alpha0: f64,
    alpha_max: f64,
    params: WolfeParams,
) -> Result<Step, LineSearchError> {
    if !(slope0 < 0.0) {
        return Err(LineSearchError::NotDescent);
    }
    let WolfeParams { c1, c2, xtol, max_evals } = params;
    let gtest = c1 * slope0;
    let mut stpmax = alpha_max;
    let stpmin = 0.0;
    let mut stp = alpha0.min(stpmax);
    let mut brackt = false;
    let mut stage1 = true;
    let (mut stx, mut fx, mut gx) = (0.0f64, f0, slope0);
    let (mut sty, mut fy, mut gy) = (0.0f64, f0, slope0);
    let mut width = stpmax - stpmin;
    let mut width1 = 2.0 * width;
    let (mut stmin, mut stmax) = (0.0, stp + 4.0 * stp);
    let mut evals = 0;
    let mut quadratic_checked = false;

    let mut eval = |a: f64, evals: &mut usize| -> Option<(f64, f64)> {
        *evals += 1;
        phi(a).filter(|(f, g)| f.is_finite() && g.is_finite())
    };

    loop {
        let (f, g) = loop {
            if evals >= max_evals {
                return accept_best(stx, fx, gx, f0, evals);
            }
            match eval(stp, &mut evals) {
                Some(v) => break v,
                None => {
                    stpmax = stp;
                    stp = stx + 0.5 * (stp - stx);
                    if stp <= stx * (1.0 + f64::EPSILON) {
                        return accept_best(stx, fx, gx, f0, evals);
                    }
                }
            }
        };
        let ftest = f0 + stp * gtest;
        let wolfe = f <= ftest && g.abs() <= c2 * (-slope0);
        // Below the resolution of f, sufficient decrease is decided by the
        // derivative instead (approximate Wolfe conditions).
        let flat = f <= f0 + ROUNDING * f0.abs() && c2 * slope0 <= g && g <= (2.0 * c1 - 1.0) * slope0;

        // One-shot refinement: along a direction where f is quadratic the
        // two-point cubic is exact, and stepping to its minimizer keeps the
        // finite-termination property of conjugate directions.
        if !quadratic_checked && !brackt {
            quadratic_checked = true;
            if let Some(star) = quadratic_minimizer(f0, slope0, stp, f, g) {
                let star = star.min(stpmax);
                if (star - stp).abs() > 1e-3 * stp && evals < max_evals {
                    if let Some((fs, gs)) = eval(star, &mut evals) {
                        if fs <= f && fs <= f0 + star * gtest && gs.abs() <= c2 * (-slope0) {
                            return Ok(Step {
                                alpha: star,
                                f: fs,
                                slope: gs,
                                evals,
                            });
                        }
                    }
                }
            }
        }
        if wolfe || flat {
            return Ok(Step {
                alpha: stp,
                f,
                slope: g,
                evals,
            });
        }
        if stp == stpmax && f <= ftest && g <= gtest {
            return Ok(Step {
                alpha: stp,
                f,
                slope: g,
                evals,
            });
        }
        if stage1 && f <= ftest && g >= 0.0 {
            stage1 = false;
        }
        if brackt && (stp <= stmin || stp >= stmax || stmax - stmin <= xtol * stmax) {
            if f < fx && f <= ftest {
                return Ok(Step {
                    alpha: stp,
                    f,
                    slope: g,
                    evals,
                });
            }
            return accept_best(stx, fx, gx, f0, evals);
        }

        if stage1 && f <= fx && f > ftest {
            let mut fxm = fx - stx * gtest;
            let mut gxm = gx - gtest;
            let mut fym = fy - sty * gtest;
            let mut gym = gy - gtest;
            let fm = f - stp * gtest;
            let gm = g - gtest;
            dcstep(
                &mut stx, &mut fxm, &mut gxm, &mut sty, &mut fym, &mut gym, &mut stp, fm, gm, &mut brackt, stmin,
                stmax,
            );
            fx = fxm + stx * gtest;
            fy = fym + sty * gtest;
            gx = gxm + gtest;
            gy = gym + gtest;
        } else {
            dcstep(
                &mut stx, &mut fx, &mut gx, &mut sty, &mut fy, &mut gy, &mut stp, f, g, &mut brackt, stmin, stmax,
            );
        }
        if brackt {
            if (sty - stx).abs() >= 0.66 * width1 {
                stp = stx + 0.5 * (sty - stx);
            }
            width1 = width;
            width = (sty - stx).abs();
            stmin = stx.min(sty);
            stmax = stx.max(sty);
        } else {
            stmin = stp + 1.1 * (stp - stx);
            stmax = stp + 4.0 * (stp - stx);
        }
        stp = stp.clamp(stpmin, stpmax);
        if brackt && (stp <= stmin || stp >= stmax || stmax - stmin <= xtol * stmax) {
            stp = stx;
        }
        if stp <= 0.0 {
            return accept_best(stx, fx, gx, f0, evals);
        }
    }
}

fn accept_best(stx: f64, fx: f64, gx: f64, f0: f64, evals: usize) -> Result<Step, LineSearchError> {
    if stx > 0.0 && fx < f0 {
        Ok(Step {
            alpha: stx,
            f: fx,
            slope: gx,
            evals,
        })
    } else {
        Err(LineSearchError::Exhausted)
    }
}

/// Minimizer of the quadratic through `(0, f0, g0)` and `(a, fa, ga)`, if
/// the data are consistent with one.
fn quadratic_minimizer(f0: f64, g0: f64, a: f64, fa: f64, ga: f64) -> Option<f64> {
    let curv = (ga - g0) / a;
    if !(curv > 0.0) {
        return None;
    }
    let predicted = a * (g0 + ga) / 2.0;
    let scale = f0.abs() + fa.abs() + a * (g0.abs() + ga.abs());
    if (fa - f0 - predicted).abs() > 1e-9 * scale {
        return None;
    }
    Some(-g0 / curv)
}

#[allow(clippy::too_many_arguments)]
fn dcstep(
    stx: &mut f64,
    fx: &mut f64,
    dx: &mut f64,
    sty: &mut f64,
    fy: &mut f64,
    dy: &mut f64,
    stp: &mut f64,
    fp: f64,
    dp: f64,
    brackt: &mut bool,
    stpmin: f64,
    stpmax: f64,
) {
    let sgnd = dp * (*dx / dx.abs());
    let stpf;
    if fp > *fx {
        let theta = 3.0 * (*fx - fp) / (*stp - *stx) + *dx + dp;
        let s = theta.abs().max(dx.abs()).max(dp.abs());
        let mut gamma = s * ((theta / s).powi(2) - (*dx / s) * (dp / s)).max(0.0).sqrt();
        if *stp < *stx {
            gamma = -gamma;
        }
        let p = (gamma - *dx) + theta;
        let q = ((gamma - *dx) + gamma) + dp;
        let r = p / q;
        let stpc = *stx + r * (*stp - *stx);
        let stpq = *stx + ((*dx / ((*fx - fp) / (*stp - *stx) + *dx)) / 2.0) * (*stp - *stx);
        stpf = if (stpc - *stx).abs() < (stpq - *stx).abs() {
            stpc
        } else {
            stpc + (stpq - stpc) / 2.0
        };
        *brackt = true;
    } else if sgnd < 0.0 {
        let theta = 3.0 * (*fx - fp) / (*stp - *stx) + *dx + dp;
        let s = theta.abs().max(dx.abs()).max(dp.abs());
        let mut gamma = s * ((theta / s).powi(2) - (*dx / s) * (dp / s)).max(0.0).sqrt();
        if *stp > *stx {
            gamma = -gamma;
        }
        let p = (gamma - dp) + theta;
        let q = ((gamma - dp) + gamma) + *dx;
        let r = p / q;
        let stpc = *stp + r * (*stx - *stp);
        let stpq = *stp + (dp / (dp - *dx)) * (*stx - *stp);
        stpf = if (stpc - *stp).abs() > (stpq - *stp).abs() { stpc } else { stpq };
        *brackt = true;
    } else if dp.abs() < dx.abs() {
        let theta = 3.0 * (*fx - fp) / (*stp - *stx) + *dx + dp;
        let s = theta.abs().max(dx.abs()).max(dp.abs());
        let mut gamma = s * ((theta / s).powi(2) - (*dx / s) * (dp / s)).max(0.0).sqrt();
        if *stp > *stx {
            gamma = -gamma;
        }
        let p = (gamma - dp) + theta;
        let q = (gamma + (*dx - dp)) + gamma;
        let r = p / q;
        let stpc = if r < 0.0 && gamma != 0.0 {
            *stp + r * (*stx - *stp)
        } else if *stp > *stx {
            stpmax
        } else {
            stpmin
        };
        let stpq = *stp + (dp / (dp - *dx)) * (*stx - *stp);
        if *brackt {
            let mut f = if (stpc - *stp).abs() < (stpq - *stp).abs() { stpc } else { stpq };
            if *stp > *stx {
                f = f.min(*stp + 0.66 * (*sty - *stp));
            } else {
                f = f.max(*stp + 0.66 * (*sty - *stp));
            }
            stpf = f;
        } else {
            let f = if (stpc - *stp).abs() > (stpq - *stp).abs() { stpc } else { stpq };
            stpf = f.clamp(stpmin, stpmax);
        }
    } else if *brackt {
        let theta = 3.0 * (fp - *fy) / (*sty - *stp) + *dy + dp;
        let s = theta.abs().max(dy.abs()).max(dp.abs());
        let mut gamma = s * ((theta / s).powi(2) - (*dy / s) * (dp / s)).max(0.0).sqrt();
        if *stp > *sty {
            gamma = -gamma;
        }
        let p = (gamma - dp) + theta;
        let q = ((gamma - dp) + gamma) + *dy;
        let r = p / q;
        stpf = *stp + r * (*sty - *stp);
    } else if *stp > *stx {
        stpf = stpmax;
    } else {
        stpf = stpmin;
    }

    if fp > *fx {
        *sty = *stp;
        *fy = fp;
        *dy = dp;
    } else {
        if sgnd < 0.0 {
            *sty = *stx;
            *fy = *fx;
            *dy = *dx;
        }
        *stx = *stp;
        *fx = fp;
        *dx = dp;
    }
    *stp = stpf;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub enum InnerStatus {
    Converged,
    MaxIter,
    LineSearchFail,
    NumericError,
}

#[derive(Debug, Clone)]
pub struct InnerResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub g: Vec<f64>,
    pub status: InnerStatus,
    pub iterations: usize,
    pub evaluations: usize,
    /// ∞-norm of the projected gradient at `x`.
    pub pg_norm: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct LbfgsbOptions {
    pub history: usize,
    pub tol: f64,
    pub max_iter: usize,
    pub wolfe: WolfeParams,
}

impl Default for LbfgsbOptions {
    fn default() -> Self {
        LbfgsbOptions {
            history: 10,
            tol: 1e-8,
            max_iter: 10_000,
            wolfe: WolfeParams::default(),
        }
    }
}

fn finite(f: f64, g: &[f64]) -> bool {
    f.is_finite() && g.iter().all(|v| v.is_finite())
}

/// Minimize `fg` (returning value and gradient) over the box from `x0`,
/// which is first projected into the box.
pub fn minimize(
    mut fg: impl FnMut(&[f64]) -> (f64, Vec<f64>),
    x0: &[f64],
    bounds: &Bounds,
    opts: &LbfgsbOptions,
) -> InnerResult {
    let n = x0.len();
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let (mut f, mut g) = fg(&x);
    let mut evaluations = 1;
    let mut mem = Memory::new(n, opts.history);
    let done = |x: Vec<f64>, f, g: Vec<f64>, status, iterations, evaluations| {
        let pg_norm = projected_gradient_norm(&x, &g, bounds);
        InnerResult {
            x,
            f,
            g,
            status,
            iterations,
            evaluations,
            pg_norm,
        }
    };
    if !finite(f, &g) {
        return done(x, f, g, InnerStatus::NumericError, 0, evaluations);
    }

    let mut iterations = 0;
    loop {
        if projected_gradient_norm(&x, &g, bounds) <= opts.tol {
            return done(x, f, g, InnerStatus::Converged, iterations, evaluations);
        }
        if iterations >= opts.max_iter {
            return done(x, f, g, InnerStatus::MaxIter, iterations, evaluations);
        }
        let cp = cauchy_point(&x, &g, &mem, bounds);
        let target = subspace_min(&x, &g, &cp, &mem, bounds);
        let mut d: Vec<f64> = target.iter().zip(&x).map(|(t, xi)| t - xi).collect();
        let mut slope: f64 = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        if !(slope < 0.0) {
            d = cp.x.iter().zip(&x).map(|(t, xi)| t - xi).collect();
            slope = d.iter().zip(&g).map(|(a, b)| a * b).sum();
        }
        if !(slope < 0.0) {
            if !mem.is_empty() {
                mem.clear();
                continue;
            }
            return done(x, f, g, InnerStatus::LineSearchFail, iterations, evaluations);
        }

        let mut alpha_max = f64::INFINITY;
        for i in 0..n {
            if d[i] > 0.0 {
                alpha_max = alpha_max.min((bounds.upper[i] - x[i]) / d[i]);
            } else if d[i] < 0.0 {
                alpha_max = alpha_max.min((bounds.lower[i] - x[i]) / d[i]);
            }
        }
        let alpha_max = alpha_max.clamp(1.0, 1e10);
        let dnorm = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        let alpha0 = if iterations == 0 && mem.is_empty() { (1.0 / dnorm).min(1.0) } else { 1.0 };

        let mut last: Option<(f64, Vec<f64>, f64, Vec<f64>)> = None;
        let trial = |a: f64, last: &mut Option<(f64, Vec<f64>, f64, Vec<f64>)>, fg: &mut dyn FnMut(&[f64]) -> (f64, Vec<f64>)| {
            let mut xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + a * di).collect();
            bounds.project(&mut xt);
            let (ft, gt) = fg(&xt);
            let slope: f64 = gt.iter().zip(&d).map(|(a, b)| a * b).sum();
            let ok = finite(ft, &gt);
            *last = Some((a, xt, ft, gt));
            ok.then_some((ft, slope))
        };
        let mut ls_evals = 0;
        let result = {
            let mut phi = |a: f64| {
                ls_evals += 1;
                trial(a, &mut last, &mut fg)
            };
            line_search(&mut phi, f, slope, alpha0, alpha_max, opts.wolfe)
        };
        evaluations += ls_evals;
        let step = match result {
            Ok(s) => s,
            Err(_) => {
                if !mem.is_empty() {
                    mem.clear();
                    continue;
                }
                return done(x, f, g, InnerStatus::LineSearchFail, iterations, evaluations);
            }
        };
        let (xn, fnew, gnew) = match last {
            Some((a, xt, ft, gt)) if a == step.alpha => (xt, ft, gt),
            _ => {
                let mut xt: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step.alpha * di).collect();
                bounds.project(&mut xt);
                let (ft, gt) = fg(&xt);
                evaluations += 1;
                (xt, ft, gt)
            }
        };
        if !finite(fnew, &gnew) || !(fnew <= f + ROUNDING * f.abs()) {
            if !mem.is_empty() {
                mem.clear();
                continue;
            }
            return done(x, f, g, InnerStatus::LineSearchFail, iterations, evaluations);
        }
        let s = DVector::from_iterator(n, xn.iter().zip(&x).map(|(a, b)| a - b));
        let y = DVector::from_iterator(n, gnew.iter().zip(&g).map(|(a, b)| a - b));
        mem.push(s, y);
        x = xn;
        f = fnew;
        g = gnew;
        iterations += 1;
    }
}
