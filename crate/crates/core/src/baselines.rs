//! Box (polytope) relaxation of the ML problem and the radius convention
//! `r = r_sc · r_plt · √n` built on it.

use serde::{Deserialize, Serialize};

use crate::error::{ClupError, Result};
use crate::linalg::dist2;
use crate::model::SystemInstance;

/// Margin on the power-iteration estimate of `λ_max(AᵀA)` used as the step bound.
const LIPSCHITZ_MARGIN: f64 = 1.1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelaxationResult {
    pub x_relaxed: Vec<f64>,
    /// `‖y − A x_relaxed‖`
    pub residual: f64,
    /// `residual / √n`
    pub r_plt_norm: f64,
    pub iterations: usize,
    /// Norm of the gradient mapping at exit.
    pub certificate: f64,
    pub converged: bool,
}

/// Minimizes `½‖y − Ax‖²` over `[−1/√n, 1/√n]ⁿ` with FISTA and gradient-based
/// adaptive restart. Stops once the gradient mapping `L‖x⁺ − z‖` at the
/// extrapolated point `z` is at most `tol`; on `max_iter` the best iterate is
/// returned with `converged = false`.
pub fn polytope_relax(instance: &SystemInstance, tol: f64, max_iter: usize) -> Result<RelaxationResult> {
    if !(tol > 0.0) {
        return Err(ClupError::InvalidConfig(format!("tol must be positive, got {tol}")));
    }
    if max_iter == 0 {
        return Err(ClupError::InvalidConfig("max_iter must be at least 1".into()));
    }
    let n = instance.n();
    let a = &instance.a;
    let s = 1.0 / (n as f64).sqrt();
    let lip = LIPSCHITZ_MARGIN * a.gram_spectral_estimate(50).max(f64::MIN_POSITIVE);
    let step = 1.0 / lip;

    let mut x = vec![0.0; n];
    let mut z = x.clone();
    let mut next = vec![0.0; n];
    let mut grad = vec![0.0; n];
    let mut theta = 1.0f64;
    let mut certificate = f64::INFINITY;
    let mut iterations = 0;
    let mut converged = false;
    while iterations < max_iter {
        iterations += 1;
        a.normal_residual_into(&z, &instance.y, &mut grad);
        for ((o, &zi), &g) in next.iter_mut().zip(&z).zip(&grad) {
            *o = (zi - step * g).clamp(-s, s);
        }
        certificate = lip * dist2(&next, &z);
        if certificate <= tol {
            std::mem::swap(&mut x, &mut next);
            converged = true;
            break;
        }
        // Restart when the step opposes the momentum direction.
        let restart = grad
            .iter()
            .zip(next.iter().zip(&x))
            .map(|(g, (xn, xo))| g * (xn - xo))
            .sum::<f64>()
            > 0.0;
        let theta_next = if restart {
            1.0
        } else {
            0.5 * (1.0 + (1.0 + 4.0 * theta * theta).sqrt())
        };
        let beta = if restart { 0.0 } else { (theta - 1.0) / theta_next };
        for ((zi, &xn), &xo) in z.iter_mut().zip(&next).zip(&x) {
            *zi = xn + beta * (xn - xo);
        }
        theta = theta_next;
        std::mem::swap(&mut x, &mut next);
    }
    let residual = instance.residual_norm(&x);
    Ok(RelaxationResult {
        r_plt_norm: residual / (n as f64).sqrt(),
        x_relaxed: x,
        residual,
        iterations,
        certificate,
        converged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Radius {
    /// `r = r_sc · r_plt_norm · √n`
    pub r: f64,
    /// `r / √n`, the value a [`crate::contraction::PhaseConfig`] takes.
    pub r_norm: f64,
}

pub fn radius_from_scaling(r_sc: f64, r_plt_norm: f64, n: usize) -> Result<Radius> {
    if !(r_sc > 0.0) || !(r_plt_norm >= 0.0) || n == 0 {
        return Err(ClupError::InvalidConfig(format!(
            "need r_sc > 0, r_plt_norm >= 0, n >= 1; got {r_sc}, {r_plt_norm}, {n}"
        )));
    }
    let r_norm = r_sc * r_plt_norm;
    Ok(Radius {
        r: r_norm * (n as f64).sqrt(),
        r_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::model::{generate_instance, SystemDims, XSolMode};

    #[test]
    fn noiseless_interior_recovery() {
        let dims = SystemDims::new(30, 1.5).unwrap();
        let base = generate_instance(dims, 0.0, 3, XSolMode::RandomSigns).unwrap();
        let x_int: Vec<f64> = base.x_sol.iter().map(|v| 0.4 * v).collect();
        let inst = SystemInstance::from_parts(base.a.clone(), x_int.clone(), vec![0.0; dims.m], 0.0).unwrap();
        let tol = 1e-9;
        let res = polytope_relax(&inst, tol, 100_000).unwrap();
        assert!(res.converged);
        let ynorm = crate::linalg::norm2(&inst.y);
        assert!(res.residual <= tol * ynorm, "{} vs {}", res.residual, tol * ynorm);
        assert!(dist2(&res.x_relaxed, &x_int) < 1e-8);
    }

    #[test]
    fn output_stays_in_box_and_beats_random_points() {
        let inst = generate_instance(SystemDims::new(40, 0.6).unwrap(), 0.3, 4, XSolMode::RandomSigns).unwrap();
        let res = polytope_relax(&inst, 1e-10, 100_000).unwrap();
        let s = 1.0 / 40f64.sqrt();
        assert!(res.x_relaxed.iter().all(|v| v.abs() <= s));
        for seed in 0..100 {
            let p = crate::model::random_corner(40, seed);
            let scaled: Vec<f64> = p.iter().enumerate().map(|(i, v)| v * ((i * 7 + seed as usize) % 11) as f64 / 10.0).collect();
            assert!(res.residual <= inst.residual_norm(&scaled) + 1e-12);
        }
    }

    #[test]
    fn iteration_cap_flags_result() {
        let inst = generate_instance(SystemDims::new(40, 0.6).unwrap(), 0.3, 5, XSolMode::RandomSigns).unwrap();
        let res = polytope_relax(&inst, 1e-14, 3).unwrap();
        assert!(!res.converged);
        assert_eq!(res.iterations, 3);
        assert!(polytope_relax(&inst, 0.0, 10).is_err());
    }

    #[test]
    fn unconstrained_minimizer_in_one_dimension() {
        // min (2x − 1)² over |x| ≤ 1: x = 1/2.
        let inst = SystemInstance::from_parts(Matrix::from_row_major(1, 1, vec![2.0]), vec![1.0], vec![-1.0], 1.0).unwrap();
        let res = polytope_relax(&inst, 1e-12, 1000).unwrap();
        assert!((res.x_relaxed[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn scaling_examples() {
        assert_eq!(radius_from_scaling(1.0, 0.2, 100).unwrap().r_norm, 0.2);
        let r = radius_from_scaling(0.5, 0.2, 100).unwrap();
        assert!((r.r_norm - 0.1).abs() < 1e-15);
        assert!((r.r - 1.0).abs() < 1e-12);
        assert!(radius_from_scaling(0.0, 0.2, 100).is_err());
        assert!(radius_from_scaling(1.0, -0.2, 100).is_err());
    }
}
