//! Large-scale CLuP: the clamped contraction
//!
//! ```text
//!   x_raw = (c_q2 x + γ̂1 √ĉ2 (Aᵀy − AᵀA x)) / (c_q2 − r)
//!   x⁺    = clamp(x_raw, −1/√n, 1/√n)      componentwise
//! ```
//!
//! with `r = r_norm·√n` and `γ̂1 = gamma1_scaled/√n`. Fixed points satisfy
//! `Aᵀ(y − Ax) = −(r / (γ̂1 √ĉ2)) x` on unclamped coordinates, the same
//! stationarity condition as the exact step, and do not depend on `c_q2`.
//! `c_q2` only sets the step length; it must exceed
//! `(γ̂1 √ĉ2 λ_max(AᵀA) + r)/2` for the unclamped dynamics to be stable.

use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{ClupError, Result};
use crate::exact_solver::ClupResult;
use crate::linalg::{dist2, dot, Matrix};
use crate::model::{check_len, overlap_stats, SystemInstance};

/// Default `n` above which `AᵀA` is not materialized.
pub const DEFAULT_GRAM_THRESHOLD: usize = 4096;

/// Safety factor applied to the stability bound when `c_q2` is chosen automatically.
pub const AUTO_CQ_MARGIN: f64 = 1.05;

const POWER_ITERATIONS: usize = 50;
const STAGNATION_WINDOW: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseConfig {
    /// `r/√n`
    pub r_norm: f64,
    /// `γ̂1·√n`
    pub gamma1_scaled: f64,
    /// Target squared norm `ĉ2`.
    pub c2_hat: f64,
    /// Contraction coefficient; `None` selects it from the spectral stability bound.
    #[serde(default)]
    pub c_q2: Option<f64>,
    pub i_max: usize,
    pub step_tol: f64,
    #[serde(default)]
    pub label: String,
}

impl PhaseConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(ClupError::InvalidConfig(format!("phase '{}': {what}", self.label)));
        if !(self.r_norm > 0.0) || !self.r_norm.is_finite() {
            return bad(format!("r_norm must be positive, got {}", self.r_norm));
        }
        if !self.gamma1_scaled.is_finite() {
            return bad("gamma1_scaled must be finite".into());
        }
        if !(self.c2_hat > 0.0 && self.c2_hat <= 1.0) {
            return bad(format!("c2_hat must lie in (0, 1], got {}", self.c2_hat));
        }
        if self.i_max == 0 {
            return bad("i_max must be at least 1".into());
        }
        if !(self.step_tol >= 0.0) {
            return bad("step_tol must be nonnegative".into());
        }
        if let Some(c) = self.c_q2 {
            if !c.is_finite() {
                return bad("c_q2 must be finite".into());
            }
        }
        Ok(())
    }

    /// `γ̂1 √ĉ2` in unnormalized units.
    pub fn gain(&self, n: usize) -> f64 {
        self.gamma1_scaled / (n as f64).sqrt() * self.c2_hat.sqrt()
    }

    /// The radius `r = r_norm √n`.
    pub fn radius(&self, n: usize) -> f64 {
        self.r_norm * (n as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GramMode {
    FullGram,
    TwoMults,
}

/// Operators shared by every step on one instance. Immutable apart from the
/// product counter, which is atomic so the struct can be shared across threads.
#[derive(Debug)]
pub struct PrecomputedOperators<'a> {
    pub mode: GramMode,
    a: &'a Matrix,
    y: &'a [f64],
    pub gram: Option<Matrix>,
    /// `Aᵀy`
    pub h: Vec<f64>,
    /// Power-iteration estimate of `λ_max(AᵀA)`.
    pub lambda_max: f64,
    products: AtomicUsize,
}

impl PrecomputedOperators<'_> {
    /// Number of matrix–vector products performed through these operators.
    pub fn products(&self) -> usize {
        self.products.load(Ordering::Relaxed)
    }

    pub fn n(&self) -> usize {
        self.a.cols()
    }

    /// Writes `Aᵀ(y − Ax)` into `out` and returns `‖y − Ax‖²`.
    fn descent_direction(&self, x: &[f64], out: &mut [f64]) -> f64 {
        match &self.gram {
            Some(g) => {
                self.products.fetch_add(1, Ordering::Relaxed);
                g.mul_vec_into(x, out);
                let xgx = dot(x, out);
                let hx = dot(&self.h, x);
                for (o, h) in out.iter_mut().zip(&self.h) {
                    *o = h - *o;
                }
                (xgx - 2.0 * hx + dot(self.y, self.y)).max(0.0)
            }
            None => {
                self.products.fetch_add(2, Ordering::Relaxed);
                let sq = self.a.normal_residual_into(x, self.y, out);
                out.iter_mut().for_each(|o| *o = -*o);
                sq
            }
        }
    }

    /// `c_q2` to use for a phase on this instance.
    pub fn resolve_cq(&self, cfg: &PhaseConfig) -> f64 {
        let n = self.n();
        cfg.c_q2.unwrap_or_else(|| {
            let r = cfg.radius(n);
            let stable = 0.5 * (cfg.gain(n) * self.lambda_max + r);
            AUTO_CQ_MARGIN * stable.max(r)
        })
    }
}

pub fn precompute(instance: &SystemInstance, gram_threshold: usize) -> PrecomputedOperators<'_> {
    let a = &instance.a;
    let gram = (instance.n() <= gram_threshold).then(|| a.gram());
    let mode = if gram.is_some() {
        GramMode::FullGram
    } else {
        GramMode::TwoMults
    };
    PrecomputedOperators {
        mode,
        a,
        y: &instance.y,
        gram,
        h: a.tr_mul_vec(&instance.y),
        lambda_max: a.gram_spectral_estimate(POWER_ITERATIONS),
        products: AtomicUsize::new(0),
    }
}

/// One clamped contraction step.
pub fn contraction_step(
    x_prev: &[f64],
    ops: &PrecomputedOperators<'_>,
    cfg: &PhaseConfig,
    n: usize,
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    step_into(x_prev, ops, cfg, n, &mut scratch, &mut out)?;
    Ok(out)
}

/// Step into `out`, using `dir` as scratch. Returns `‖y − A x_prev‖²`.
fn step_into(
    x_prev: &[f64],
    ops: &PrecomputedOperators<'_>,
    cfg: &PhaseConfig,
    n: usize,
    dir: &mut [f64],
    out: &mut [f64],
) -> Result<f64> {
    check_len(n, x_prev.len())?;
    check_len(n, ops.n())?;
    let cq = ops.resolve_cq(cfg);
    let r = cfg.radius(n);
    let denom = cq - r;
    if denom == 0.0 {
        return Err(ClupError::InvalidConfig(format!(
            "phase '{}': c_q2 equals the radius term ({cq})",
            cfg.label
        )));
    }
    let gain = cfg.gain(n);
    let s = 1.0 / (n as f64).sqrt();
    let res_sq = ops.descent_direction(x_prev, dir);
    for ((o, &x), &d) in out.iter_mut().zip(x_prev).zip(dir.iter()) {
        let raw = (cq * x + gain * d) / denom;
        if !raw.is_finite() {
            return Err(ClupError::NonFinite(format!(
                "phase '{}': c_q2={cq}, gamma1_scaled={}, c2_hat={}, r_norm={}",
                cfg.label, cfg.gamma1_scaled, cfg.c2_hat, cfg.r_norm
            )));
        }
        *o = raw.clamp(-s, s);
    }
    Ok(res_sq)
}

pub fn contraction_run(instance: &SystemInstance, cfg: &PhaseConfig, x0: &[f64]) -> Result<ClupResult> {
    let ops = precompute(instance, DEFAULT_GRAM_THRESHOLD);
    contraction_run_with(&ops, instance, cfg, x0)
}

pub fn contraction_run_with(
    ops: &PrecomputedOperators<'_>,
    instance: &SystemInstance,
    cfg: &PhaseConfig,
    x0: &[f64],
) -> Result<ClupResult> {
    cfg.validate()?;
    let n = instance.n();
    check_len(n, x0.len())?;
    let s = 1.0 / (n as f64).sqrt();
    let r = cfg.radius(n);
    let mut x: Vec<f64> = x0.iter().map(|v| v.clamp(-s, s)).collect();
    let mut next = vec![0.0; n];
    let mut dir = vec![0.0; n];
    let mut trajectory = Vec::with_capacity(cfg.i_max.min(4096));
    let mut converged = false;
    let mut non_convergent = false;
    let mut stagnant = 0usize;
    for _ in 0..cfg.i_max {
        let res_sq = step_into(&x, ops, cfg, n, &mut dir, &mut next)?;
        trajectory.push(overlap_stats(&next, &instance.x_sol)?);
        let moved = dist2(&next, &x);
        // Stuck on a corner far outside the ball, counting the previous iterate.
        let far_corner = x.iter().all(|v| v.abs() == s) && res_sq.sqrt() > 3.0 * r;
        std::mem::swap(&mut x, &mut next);
        stagnant = if far_corner { stagnant + 1 } else { 0 };
        if far_corner && (moved <= cfg.step_tol || stagnant >= STAGNATION_WINDOW) {
            non_convergent = true;
            break;
        }
        if moved <= cfg.step_tol {
            converged = true;
            break;
        }
    }
    let residual_final = instance.residual_norm(&x);
    Ok(ClupResult {
        iterations: trajectory.len(),
        x_step: x.clone(),
        x_final: x,
        trajectory,
        residual_final,
        converged,
        non_convergent,
    })
}

/// `‖x − step(x)‖`: zero exactly at fixed points of the contraction.
pub fn fixed_point_residual(instance: &SystemInstance, x: &[f64], cfg: &PhaseConfig) -> Result<f64> {
    let ops = precompute(instance, DEFAULT_GRAM_THRESHOLD);
    fixed_point_residual_with(&ops, x, cfg)
}

pub fn fixed_point_residual_with(ops: &PrecomputedOperators<'_>, x: &[f64], cfg: &PhaseConfig) -> Result<f64> {
    cfg.validate()?;
    let step = contraction_step(x, ops, cfg, ops.n())?;
    Ok(dist2(x, &step))
}
