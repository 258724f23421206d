//! Basic CLuP: repeat the box-and-ball constrained linear step and renormalize.
//!
//! The inner step solves
//!
//! ```text
//!   maximize  pᵀx   subject to  ‖y − A x‖₂ ≤ r,  x ∈ [−1/√n, 1/√n]ⁿ
//! ```
//!
//! exactly. With `t = 1/(2μ)` for the multiplier `μ` of the squared ball
//! constraint, the minimizer of `½‖Ax − y‖² − t pᵀx` over the box is piecewise
//! affine in `t`. The path starts at the corner `sign(p)/√n` (large `t`) and is
//! followed downwards, one active-set change at a time, until the residual
//! equals `r`. The residual along a segment is `R₀ + t² pᵀ_F M_F⁻¹ p_F`, so the
//! stopping point is found in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{ClupError, Result};
use crate::linalg::{dist2, dot, norm2, Matrix};
use crate::model::{check_len, overlap_stats, SystemInstance};

pub use crate::model::random_corner as random_corner_init;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactStepSettings {
    /// Relative slack accepted on the ball constraint.
    pub constraint_tol: f64,
    /// Largest multiplier `μ` explored before the radius is declared infeasible.
    pub mu_bracket_max: f64,
    /// KKT tolerance the returned point must satisfy.
    pub inner_tol: f64,
    /// Cap on active-set changes along the multiplier path.
    pub inner_max_iter: usize,
}

impl Default for ExactStepSettings {
    fn default() -> Self {
        ExactStepSettings {
            constraint_tol: 1e-9,
            mu_bracket_max: 1e6,
            inner_tol: 1e-10,
            inner_max_iter: 10_000,
        }
    }
}

impl ExactStepSettings {
    fn validate(&self) -> Result<()> {
        if !(self.constraint_tol > 0.0 && self.mu_bracket_max > 0.0 && self.inner_tol > 0.0)
            || self.inner_max_iter == 0
        {
            return Err(ClupError::InvalidConfig(format!(
                "exact-step tolerances must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Output of one constrained step.
#[derive(Debug, Clone)]
pub struct InnerStep {
    pub x: Vec<f64>,
    /// Multiplier of the squared ball constraint; zero when the ball is inactive.
    pub mu: f64,
    pub residual: f64,
    /// Active-set changes taken along the path.
    pub events: usize,
    /// Scaled KKT violation `max |∇(μ‖y−Ax‖² − pᵀx)|` over free coordinates,
    /// and sign violations on bound coordinates.
    pub kkt_residual: f64,
}

/// Result of an iterated CLuP run (shared by the exact and contraction engines).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClupResult {
    /// Final iterate. Unit norm for the exact engine, in the box for the contraction.
    pub x_final: Vec<f64>,
    /// Final constrained-step output (always inside the box).
    pub x_step: Vec<f64>,
    /// Overlap statistics of each step output, before any normalization.
    pub trajectory: Vec<crate::model::OverlapStats>,
    pub residual_final: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Exact engine: `max_iter` reached without convergence.
    /// Contraction engine: stuck on a box corner far outside the ball.
    pub non_convergent: bool,
}

/// `AᵀA` and `Aᵀy` for an instance, shared by all inner steps of a run.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub gram: Matrix,
    pub aty: Vec<f64>,
    pub yty: f64,
}

impl NormalEquations {
    pub fn new(instance: &SystemInstance) -> Self {
        NormalEquations {
            gram: instance.a.gram(),
            aty: instance.a.tr_mul_vec(&instance.y),
            yty: dot(&instance.y, &instance.y),
        }
    }

    /// `‖Ax − y‖² = xᵀGx − 2 hᵀx + yᵀy`
    fn residual_sq(&self, x: &[f64]) -> f64 {
        let gx = self.gram.mul_vec(x);
        (dot(x, &gx) - 2.0 * dot(&self.aty, x) + self.yty).max(0.0)
    }
}

pub fn clup_inner_step(
    instance: &SystemInstance,
    x_prev: &[f64],
    r: f64,
    settings: &ExactStepSettings,
) -> Result<InnerStep> {
    let normal = NormalEquations::new(instance);
    inner_step_with(&normal, instance.n(), x_prev, r, settings)
}

/// Inner step on precomputed normal equations.
pub fn inner_step_with(
    normal: &NormalEquations,
    n: usize,
    x_prev: &[f64],
    r: f64,
    settings: &ExactStepSettings,
) -> Result<InnerStep> {
    settings.validate()?;
    check_len(n, x_prev.len())?;
    if !(r > 0.0) || !r.is_finite() {
        return Err(ClupError::InvalidConfig(format!("radius must be positive, got {r}")));
    }
    let pmax = x_prev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if pmax == 0.0 || !pmax.is_finite() {
        return Err(ClupError::InvalidConfig(
            "previous iterate must be nonzero and finite".into(),
        ));
    }
    let s = 1.0 / (n as f64).sqrt();
    // Exact zeros get a negligible tilt so every coordinate has a preferred bound.
    let tilt = 1e-12 * pmax;
    let p: Vec<f64> = x_prev
        .iter()
        .map(|&v| if v == 0.0 { tilt } else { v })
        .collect();

    let corner: Vec<f64> = p.iter().map(|&v| if v >= 0.0 { s } else { -s }).collect();
    let corner_res = normal.residual_sq(&corner).sqrt();
    if corner_res <= r * (1.0 + settings.constraint_tol) {
        return Ok(InnerStep {
            x: corner,
            mu: 0.0,
            residual: corner_res,
            events: 0,
            kkt_residual: 0.0,
        });
    }

    let mut path = MultiplierPath::new(normal, &p, s, corner);
    let t_floor = 1.0 / (2.0 * settings.mu_bracket_max);
    path.follow(r, t_floor, settings)
}

/// State of the piecewise-affine multiplier path.
struct MultiplierPath<'a> {
    normal: &'a NormalEquations,
    p: &'a [f64],
    s: f64,
    n: usize,
    /// Position of each coordinate in `free`, if free.
    slot: Vec<Option<usize>>,
    free: Vec<usize>,
    /// Bound value of each bound coordinate (ignored while free).
    bound: Vec<f64>,
    /// `G_{:,B} b_B`
    gb: Vec<f64>,
    chol: IncrementalCholesky,
    /// Segment: `x_F(t) = u + t w`, gradient `g(t) = g0 + t g1`.
    u: Vec<f64>,
    w: Vec<f64>,
    g0: Vec<f64>,
    g1: Vec<f64>,
}

enum Event {
    Hit { pos: usize, value: f64 },
    Release { coord: usize },
}

impl<'a> MultiplierPath<'a> {
    fn new(normal: &'a NormalEquations, p: &'a [f64], s: f64, corner: Vec<f64>) -> Self {
        let n = p.len();
        let gb = normal.gram.mul_vec(&corner);
        MultiplierPath {
            normal,
            p,
            s,
            n,
            slot: vec![None; n],
            free: Vec::new(),
            bound: corner,
            gb,
            chol: IncrementalCholesky::default(),
            u: Vec::new(),
            w: Vec::new(),
            g0: vec![0.0; n],
            g1: vec![0.0; n],
        }
    }

    fn refresh_segment(&mut self) {
        let g = &self.normal.gram;
        let h = &self.normal.aty;
        let rhs_u: Vec<f64> = self.free.iter().map(|&i| h[i] - self.gb[i]).collect();
        let rhs_w: Vec<f64> = self.free.iter().map(|&i| self.p[i]).collect();
        self.u = self.chol.solve(&rhs_u);
        self.w = self.chol.solve(&rhs_w);
        for i in 0..self.n {
            self.g0[i] = self.gb[i] - h[i];
            self.g1[i] = -self.p[i];
        }
        // G is symmetric, so column j is row j.
        for (k, &j) in self.free.iter().enumerate() {
            let col = g.row(j);
            let (uk, wk) = (self.u[k], self.w[k]);
            for i in 0..self.n {
                self.g0[i] += col[i] * uk;
                self.g1[i] += col[i] * wk;
            }
        }
    }

    fn point(&self, t: f64) -> Vec<f64> {
        let mut x = self.bound.clone();
        for (k, &i) in self.free.iter().enumerate() {
            x[i] = (self.u[k] + t * self.w[k]).clamp(-self.s, self.s);
        }
        x
    }

    fn next_event(&self, t_cur: f64, last: Option<usize>) -> Option<(f64, Event)> {
        let eps = 1e-12 * t_cur.abs().max(1e-300);
        let mut best: Option<(f64, Event)> = None;
        // The coordinate changed by the previous event may not flip straight back.
        let consider = |t: f64, coord: usize, ev: Event, best: &mut Option<(f64, Event)>| {
            if Some(coord) == last && t >= t_cur - eps {
                return;
            }
            if t.is_finite() && t <= t_cur + eps && best.as_ref().is_none_or(|(bt, _)| t > *bt) {
                *best = Some((t, ev));
            }
        };
        for (k, &i) in self.free.iter().enumerate() {
            let (u, w) = (self.u[k], self.w[k]);
            if w > 0.0 {
                consider((-self.s - u) / w, i, Event::Hit { pos: k, value: -self.s }, &mut best);
            } else if w < 0.0 {
                consider((self.s - u) / w, i, Event::Hit { pos: k, value: self.s }, &mut best);
            }
        }
        for i in 0..self.n {
            if self.slot[i].is_some() {
                continue;
            }
            let (g0, g1) = (self.g0[i], self.g1[i]);
            let upper = self.bound[i] > 0.0;
            // Upper bound needs g <= 0, lower bound needs g >= 0 (g is the
            // gradient of the penalized objective being minimized).
            if t_cur.is_finite() && Some(i) != last {
                let g_now = g0 + t_cur * g1;
                if (upper && g_now > 0.0) || (!upper && g_now < 0.0) {
                    consider(t_cur, i, Event::Release { coord: i }, &mut best);
                    continue;
                }
            }
            let entering = if upper { g1 < 0.0 } else { g1 > 0.0 };
            if entering {
                consider(-g0 / g1, i, Event::Release { coord: i }, &mut best);
            }
        }
        best
    }

    fn follow(&mut self, r: f64, t_floor: f64, settings: &ExactStepSettings) -> Result<InnerStep> {
        let r2 = r * r;
        let mut t_cur = f64::INFINITY;
        let mut last: Option<usize> = None;
        let mut events = 0usize;
        self.refresh_segment();
        loop {
            // Residual on this segment: R0 + t² pᵀ_F w.
            let x_at_zero: Vec<f64> = {
                let mut x = self.bound.clone();
                for (k, &i) in self.free.iter().enumerate() {
                    x[i] = self.u[k];
                }
                x
            };
            let r0 = self.normal.residual_sq(&x_at_zero);
            let curvature: f64 = self
                .free
                .iter()
                .enumerate()
                .map(|(k, &i)| self.p[i] * self.w[k])
                .sum::<f64>()
                .max(0.0);

            let next = self.next_event(t_cur, last);
            let t_next = next.as_ref().map_or(0.0, |(t, _)| t.max(0.0));
            if curvature > 0.0 && r2 >= r0 {
                let t_target = ((r2 - r0) / curvature).sqrt();
                if t_target >= t_next && t_target <= t_cur {
                    return self.finish(t_target, events, settings);
                }
            }
            let Some((t_ev, ev)) = next else {
                return Err(self.infeasible(r, 0.0));
            };
            if t_ev < t_floor {
                return Err(self.infeasible(r, t_floor));
            }
            events += 1;
            if events > settings.inner_max_iter {
                let x = self.point(t_cur.min(1e300));
                let kkt = self.kkt(t_cur.min(1e300), &x);
                return Err(ClupError::InnerNonConvergence {
                    events,
                    kkt_residual: kkt,
                    best: x,
                });
            }
            t_cur = t_ev.max(0.0);
            match ev {
                Event::Hit { pos, value } => {
                    let coord = self.free[pos];
                    self.remove_free(pos, value);
                    last = Some(coord);
                }
                Event::Release { coord } => {
                    if !self.add_free(coord) {
                        // Singular reduced system: the released coordinate is
                        // linearly dependent on the free set.
                        let x = self.point(t_cur);
                        let kkt = self.kkt(t_cur, &x);
                        return Err(ClupError::InnerNonConvergence {
                            events,
                            kkt_residual: kkt,
                            best: x,
                        });
                    }
                    last = Some(coord);
                }
            }
            if events % 64 == 0 {
                self.refactor();
            }
            self.refresh_segment();
        }
    }

    fn add_free(&mut self, coord: usize) -> bool {
        let g = &self.normal.gram;
        let b = self.bound[coord];
        let col = g.row(coord);
        for (gi, ci) in self.gb.iter_mut().zip(col) {
            *gi -= ci * b;
        }
        let cross: Vec<f64> = self.free.iter().map(|&j| g.get(j, coord)).collect();
        if !self.chol.push(&cross, g.get(coord, coord)) {
            for (gi, ci) in self.gb.iter_mut().zip(col) {
                *gi += ci * b;
            }
            return false;
        }
        self.slot[coord] = Some(self.free.len());
        self.free.push(coord);
        true
    }

    fn remove_free(&mut self, pos: usize, value: f64) {
        let coord = self.free.remove(pos);
        self.chol.remove(pos);
        self.slot[coord] = None;
        for (k, &i) in self.free.iter().enumerate().skip(pos) {
            self.slot[i] = Some(k);
        }
        self.bound[coord] = value;
        let col = self.normal.gram.row(coord);
        for (gi, ci) in self.gb.iter_mut().zip(col) {
            *gi += ci * value;
        }
    }

    fn refactor(&mut self) {
        let g = &self.normal.gram;
        let mut fresh = IncrementalCholesky::default();
        for (k, &j) in self.free.iter().enumerate() {
            let cross: Vec<f64> = self.free[..k].iter().map(|&i| g.get(i, j)).collect();
            if !fresh.push(&cross, g.get(j, j)) {
                return;
            }
        }
        self.chol = fresh;
        self.gb = g.mul_vec(&self.bound_only());
    }

    fn bound_only(&self) -> Vec<f64> {
        (0..self.n)
            .map(|i| if self.slot[i].is_some() { 0.0 } else { self.bound[i] })
            .collect()
    }

    fn kkt(&self, t: f64, x: &[f64]) -> f64 {
        let gx = self.normal.gram.mul_vec(x);
        let mut worst: f64 = 0.0;
        for i in 0..self.n {
            let grad = gx[i] - self.normal.aty[i] - t * self.p[i];
            let v = if self.slot[i].is_some() {
                grad.abs()
            } else if self.bound[i] > 0.0 {
                grad.max(0.0)
            } else {
                (-grad).max(0.0)
            };
            worst = worst.max(v);
        }
        // Scale to the gradient of μ‖y − Ax‖² − pᵀx, μ = 1/(2t).
        if t > 0.0 {
            worst / t
        } else {
            worst
        }
    }

    fn finish(&self, t: f64, events: usize, settings: &ExactStepSettings) -> Result<InnerStep> {
        let x = self.point(t);
        let residual = self.normal.residual_sq(&x).sqrt();
        let kkt = self.kkt(t, &x);
        let scale = 1.0 + norm2(self.p);
        // The path is exact up to rounding, so only a gross violation means trouble.
        if kkt > settings.inner_tol.sqrt() * scale {
            return Err(ClupError::InnerNonConvergence {
                events,
                kkt_residual: kkt,
                best: x,
            });
        }
        Ok(InnerStep {
            x,
            mu: 1.0 / (2.0 * t),
            residual,
            events,
            kkt_residual: kkt,
        })
    }

    fn infeasible(&self, r: f64, t: f64) -> ClupError {
        let x = self.point(t);
        ClupError::Infeasible {
            radius: r,
            min_residual: self.normal.residual_sq(&x).sqrt(),
        }
    }
}

/// Cholesky factor of the reduced Gram matrix, updated one index at a time.
#[derive(Debug, Default, Clone)]
struct IncrementalCholesky {
    /// Row `i` holds `L[i][0..=i]`.
    rows: Vec<Vec<f64>>,
}

impl IncrementalCholesky {
    fn len(&self) -> usize {
        self.rows.len()
    }

    /// Appends a row/column with off-diagonal `cross` and diagonal `diag`.
    fn push(&mut self, cross: &[f64], diag: f64) -> bool {
        let mut l = self.forward(cross);
        let d = diag - dot(&l, &l);
        if !(d > 1e-12 * diag.abs().max(1e-300)) {
            return false;
        }
        l.push(d.sqrt());
        self.rows.push(l);
        true
    }

    fn remove(&mut self, k: usize) {
        self.rows.remove(k);
        let len = self.len();
        // Rows k.. now carry one extra column; rotate it away.
        for i in k..len {
            let a = self.rows[i][i];
            let b = self.rows[i][i + 1];
            let rr = a.hypot(b);
            let (c, sn) = if rr == 0.0 { (1.0, 0.0) } else { (a / rr, b / rr) };
            for row in self.rows[i..].iter_mut() {
                let (x, y) = (row[i], row[i + 1]);
                row[i] = c * x + sn * y;
                row[i + 1] = -sn * x + c * y;
            }
            self.rows[i].truncate(i + 1);
        }
    }

    fn forward(&self, b: &[f64]) -> Vec<f64> {
        let mut z = Vec::with_capacity(b.len() + 1);
        for (i, row) in self.rows.iter().enumerate() {
            let s = b[i] - dot(&row[..i], &z[..i]);
            z.push(s / row[i]);
        }
        z
    }

    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut z = self.forward(b);
        for i in (0..self.len()).rev() {
            let mut s = z[i];
            for k in (i + 1)..self.len() {
                s -= self.rows[k][i] * z[k];
            }
            z[i] = s / self.rows[i][i];
        }
        z
    }
}

pub fn clup_run(
    instance: &SystemInstance,
    r: f64,
    x0: &[f64],
    max_iter: usize,
    step_tol: f64,
    settings: &ExactStepSettings,
) -> Result<ClupResult> {
    let normal = NormalEquations::new(instance);
    clup_run_with(&normal, instance, r, x0, max_iter, step_tol, settings)
}

pub fn clup_run_with(
    normal: &NormalEquations,
    instance: &SystemInstance,
    r: f64,
    x0: &[f64],
    max_iter: usize,
    step_tol: f64,
    settings: &ExactStepSettings,
) -> Result<ClupResult> {
    let n = instance.n();
    check_len(n, x0.len())?;
    if max_iter == 0 {
        return Err(ClupError::InvalidConfig("max_iter must be at least 1".into()));
    }
    if norm2(x0) == 0.0 {
        return Err(ClupError::InvalidConfig("x0 must be nonzero".into()));
    }
    let mut x = x0.to_vec();
    let mut trajectory = Vec::with_capacity(max_iter.min(1024));
    let mut converged = false;
    let mut last_step = Vec::new();
    let mut residual_final = f64::NAN;
    for it in 0..max_iter {
        let step = inner_step_with(normal, n, &x, r, settings).map_err(|e| e.at_iteration(it))?;
        trajectory.push(overlap_stats(&step.x, &instance.x_sol)?);
        let norm = norm2(&step.x);
        if !(norm > 0.0) {
            return Err(ClupError::NonFinite(format!("zero step output at iteration {it}")).at_iteration(it));
        }
        let next: Vec<f64> = step.x.iter().map(|v| v / norm).collect();
        let moved = dist2(&next, &x);
        x = next;
        residual_final = step.residual;
        last_step = step.x;
        if moved <= step_tol {
            converged = true;
            break;
        }
    }
    Ok(ClupResult {
        iterations: trajectory.len(),
        x_final: x,
        x_step: last_step,
        trajectory,
        residual_final,
        converged,
        non_convergent: !converged,
    })
}
