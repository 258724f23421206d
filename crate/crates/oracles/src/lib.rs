//! Reference solvers that share no numerical code with `clup-core`: a dense
//! row-of-vectors representation, a multiplier bisection around a long-run
//! projected FISTA, and a brute-force grid search in three dimensions.

use clup_core::baselines::polytope_relax;
use clup_core::model::SystemInstance;

pub struct Dense {
    pub m: usize,
    pub n: usize,
    pub a: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

impl Dense {
    pub fn of(inst: &SystemInstance) -> Dense {
        let (m, n) = (inst.a.rows(), inst.a.cols());
        Dense {
            m,
            n,
            a: (0..m).map(|i| (0..n).map(|j| inst.a.get(i, j)).collect()).collect(),
            y: inst.y.clone(),
        }
    }

    pub fn residual(&self, x: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|i| self.a[i].iter().zip(x).map(|(a, b)| a * b).sum::<f64>() - self.y[i])
            .collect()
    }

    pub fn residual_norm(&self, x: &[f64]) -> f64 {
        self.residual(x).iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Gradient of `μ‖Ax − y‖² − pᵀx`.
    pub fn grad(&self, mu: f64, p: &[f64], x: &[f64]) -> Vec<f64> {
        let res = self.residual(x);
        (0..self.n)
            .map(|j| 2.0 * mu * (0..self.m).map(|i| self.a[i][j] * res[i]).sum::<f64>() - p[j])
            .collect()
    }

    fn frobenius2(&self) -> f64 {
        self.a.iter().flatten().map(|v| v * v).sum()
    }
}

/// Minimizer of `μ‖Ax − y‖² − pᵀx` over the box by FISTA with restart.
pub fn box_minimizer(d: &Dense, mu: f64, p: &[f64], warm: &[f64]) -> Vec<f64> {
    let s = 1.0 / (d.n as f64).sqrt();
    let lip = 2.0 * mu * d.frobenius2();
    let mut x = warm.to_vec();
    let mut z = x.clone();
    let mut t = 1.0f64;
    for _ in 0..400_000 {
        let g = d.grad(mu, p, &z);
        let next: Vec<f64> = z.iter().zip(&g).map(|(zi, gi)| (zi - gi / lip).clamp(-s, s)).collect();
        let gap = next.iter().zip(&z).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() * lip;
        if gap < 1e-13 {
            return next;
        }
        let restart = g.iter().zip(next.iter().zip(&x)).map(|(g, (a, b))| g * (a - b)).sum::<f64>() > 0.0;
        let t_next = if restart { 1.0 } else { 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt()) };
        let beta = if restart { 0.0 } else { (t - 1.0) / t_next };
        z = next.iter().zip(&x).map(|(a, b)| a + beta * (a - b)).collect();
        x = next;
        t = t_next;
    }
    x
}

/// Maximum of `pᵀx` over the box intersected with `‖y − Ax‖ ≤ r`, assuming the
/// ball binds: bisection on `log μ` until the box minimizer's residual is `r`.
pub fn oracle_max(d: &Dense, p: &[f64], r: f64) -> f64 {
    let (mut lo, mut hi) = (-20.0f64, 20.0f64);
    let mut warm = vec![0.0; d.n];
    let mut x = warm.clone();
    for _ in 0..70 {
        let mid = 0.5 * (lo + hi);
        x = box_minimizer(d, mid.exp(), p, &warm);
        warm.clone_from(&x);
        if d.residual_norm(&x) > r {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    x = box_minimizer(d, hi.exp(), p, &x);
    p.iter().zip(&x).map(|(a, b)| a * b).sum()
}

/// A radius strictly between the smallest achievable residual and the
/// residual of the corner `sign(p)/√n`, so the ball binds.
pub fn binding_radius(inst: &SystemInstance, p: &[f64], frac: f64) -> f64 {
    let r_min = polytope_relax(inst, 1e-12, 200_000).unwrap().residual;
    let n = inst.n();
    let corner: Vec<f64> = p.iter().map(|v| v.signum() / (n as f64).sqrt()).collect();
    let r_corner = inst.residual_norm(&corner);
    r_min + frac * (r_corner - r_min)
}

/// Largest `pᵀx` over a uniform grid on `(x1, x2)`; for each pair the feasible
/// `x3` is an interval of a quadratic inequality, maximized exactly.
pub fn grid_max_n3(d: &Dense, p: &[f64], r: f64, h: f64) -> f64 {
    let s = 1.0 / 3f64.sqrt();
    let steps = (2.0 * s / h).ceil() as usize;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=steps {
        let x1 = (-s + i as f64 * h).min(s);
        for j in 0..=steps {
            let x2 = (-s + j as f64 * h).min(s);
            // ‖u + x3·a3‖² ≤ r² with u = x1·a1 + x2·a2 − y.
            let (mut qa, mut qb, mut qc) = (0.0, 0.0, -r * r);
            for row in 0..d.m {
                let u = d.a[row][0] * x1 + d.a[row][1] * x2 - d.y[row];
                let c = d.a[row][2];
                qa += c * c;
                qb += 2.0 * u * c;
                qc += u * u;
            }
            let disc = qb * qb - 4.0 * qa * qc;
            if disc < 0.0 {
                continue;
            }
            let lo = ((-qb - disc.sqrt()) / (2.0 * qa)).max(-s);
            let hi = ((-qb + disc.sqrt()) / (2.0 * qa)).min(s);
            if lo > hi {
                continue;
            }
            let x3 = if p[2] >= 0.0 { hi } else { lo };
            best = best.max(p[0] * x1 + p[1] * x2 + p[2] * x3);
        }
    }
    best
}
