//! The random linear system `y = A x_sol + σ v` and solution-quality metrics.
//!
//! Random draw order (fixed, so seeds replay across implementations of the
//! same generator): a ChaCha8 stream seeded with `seed` produces the entries
//! of `A` row-major as standard normals, then the `m` entries of `v`, then
//! `n` sign bits for `x_sol` (skipped when `x_sol` is all-plus).

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ClupError, Result};
use crate::linalg::{dot, Matrix};

pub const RNG_DRAW_ORDER: &str =
    "ChaCha8(seed): A row-major N(0,1), then v N(0,1), then x_sol sign bits";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemDims {
    pub n: usize,
    pub m: usize,
    pub alpha: f64,
}

impl SystemDims {
    /// `m = round(alpha · n)`.
    pub fn new(n: usize, alpha: f64) -> Result<Self> {
        if n == 0 {
            return Err(ClupError::InvalidConfig("n must be at least 1".into()));
        }
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(ClupError::InvalidConfig(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        let m = (alpha * n as f64).round() as usize;
        if m == 0 {
            return Err(ClupError::InvalidConfig(format!(
                "alpha·n rounds to zero measurements (n={n}, alpha={alpha})"
            )));
        }
        Ok(SystemDims { n, m, alpha })
    }

    /// Half-width of the box, `1/√n`.
    #[inline]
    pub fn box_bound(&self) -> f64 {
        1.0 / (self.n as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XSolMode {
    RandomSigns,
    AllPlus,
}

#[derive(Debug, Clone)]
pub struct SystemInstance {
    pub dims: SystemDims,
    pub a: Matrix,
    pub x_sol: Vec<f64>,
    pub v: Vec<f64>,
    pub sigma: f64,
    pub y: Vec<f64>,
    pub seed: u64,
}

impl SystemInstance {
    /// Assembles an instance from explicit parts (`y` is recomputed).
    pub fn from_parts(a: Matrix, x_sol: Vec<f64>, v: Vec<f64>, sigma: f64) -> Result<Self> {
        let (m, n) = (a.rows(), a.cols());
        check_len(n, x_sol.len())?;
        check_len(m, v.len())?;
        let dims = SystemDims {
            n,
            m,
            alpha: m as f64 / n as f64,
        };
        let mut y = a.mul_vec(&x_sol);
        for (yi, vi) in y.iter_mut().zip(&v) {
            *yi += sigma * vi;
        }
        Ok(SystemInstance {
            dims,
            a,
            x_sol,
            v,
            sigma,
            y,
            seed: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.dims.n
    }

    /// `‖y − A x‖₂`
    pub fn residual_norm(&self, x: &[f64]) -> f64 {
        let ax = self.a.mul_vec(x);
        ax.iter()
            .zip(&self.y)
            .map(|(p, q)| (q - p) * (q - p))
            .sum::<f64>()
            .sqrt()
    }
}

/// `σ = 10^(−snr/20)`, i.e. `1/σ²` equals `snr_db` in decibels.
pub fn snr_db_to_sigma(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 20.0)
}

pub fn generate_instance(
    dims: SystemDims,
    sigma: f64,
    seed: u64,
    x_sol_mode: XSolMode,
) -> Result<SystemInstance> {
    let SystemDims { n, m, .. } = dims;
    if n == 0 || m == 0 {
        return Err(ClupError::InvalidConfig(format!("bad dimensions n={n}, m={m}")));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(ClupError::InvalidConfig(format!(
            "sigma must be nonnegative and finite, got {sigma}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..m * n).map(|_| rng.sample(StandardNormal)).collect();
    let a = Matrix::from_row_major(m, n, data);
    let v: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
    let s = dims.box_bound();
    let x_sol: Vec<f64> = match x_sol_mode {
        XSolMode::AllPlus => vec![s; n],
        XSolMode::RandomSigns => (0..n)
            .map(|_| if rng.random::<bool>() { s } else { -s })
            .collect(),
    };
    let mut y = a.mul_vec(&x_sol);
    for (yi, vi) in y.iter_mut().zip(&v) {
        *yi += sigma * vi;
    }
    Ok(SystemInstance {
        dims,
        a,
        x_sol,
        v,
        sigma,
        y,
        seed,
    })
}

/// Order parameters of an iterate: `c1 = x_solᵀx`, `c2 = ‖x‖²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapStats {
    pub c1: f64,
    pub c2: f64,
}

pub fn overlap_stats(x: &[f64], x_sol: &[f64]) -> Result<OverlapStats> {
    check_len(x_sol.len(), x.len())?;
    Ok(OverlapStats {
        c1: dot(x_sol, x),
        c2: dot(x, x),
    })
}

/// Fraction of coordinates whose sign differs from `x_sol` (zero counts as `+`).
pub fn bit_error_fraction(x: &[f64], x_sol: &[f64]) -> Result<f64> {
    Ok(bit_errors(x, x_sol)? as f64 / x.len().max(1) as f64)
}

pub fn bit_errors(x: &[f64], x_sol: &[f64]) -> Result<usize> {
    check_len(x_sol.len(), x.len())?;
    Ok(x.iter()
        .zip(x_sol)
        .filter(|(a, b)| positive(**a) != positive(**b))
        .count())
}

/// Maps each coordinate to `±1/√n` by its sign, with `sign(0) = +`.
pub fn round_to_corner(x: &[f64], n: usize) -> Vec<f64> {
    let s = 1.0 / (n as f64).sqrt();
    x.iter().map(|&v| if positive(v) { s } else { -s }).collect()
}

/// Uniform random point of `{±1/√n}^n`, a deterministic function of `seed`.
pub fn random_corner(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = 1.0 / (n as f64).sqrt();
    (0..n)
        .map(|_| if rng.random::<bool>() { s } else { -s })
        .collect()
}

#[inline]
fn positive(v: f64) -> bool {
    v >= 0.0
}

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(ClupError::LengthMismatch { expected, found });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn snr_conversion() {
        assert_eq!(snr_db_to_sigma(0.0), 1.0);
        assert!((snr_db_to_sigma(20.0) - 0.1).abs() < 1e-15);
        // 10^(-0.65) evaluated with mpmath at 30 digits.
        assert!((snr_db_to_sigma(13.0) - 0.223_872_113_856_834_0).abs() < 1e-15);
    }

    #[test]
    fn dims_round_measurements() {
        assert_eq!(SystemDims::new(4000, 0.6).unwrap().m, 2400);
        assert_eq!(SystemDims::new(4, 0.5).unwrap().m, 2);
        assert_eq!(SystemDims::new(2000, 0.6).unwrap().m, 1200);
        assert!(SystemDims::new(0, 0.6).is_err());
        assert!(SystemDims::new(10, 0.0).is_err());
        assert!(SystemDims::new(10, 0.01).is_err());
    }

    #[test]
    fn noiseless_all_plus_reconstruction() {
        let dims = SystemDims::new(4, 0.5).unwrap();
        let inst = generate_instance(dims, 0.0, 7, XSolMode::AllPlus).unwrap();
        assert_eq!(inst.dims.m, 2);
        assert!(inst.x_sol.iter().all(|&v| v == 0.5));
        let ax = inst.a.mul_vec(&[0.5; 4]);
        assert_eq!(ax, inst.y);
    }

    #[test]
    fn generation_is_deterministic() {
        let dims = SystemDims::new(50, 0.6).unwrap();
        let a = generate_instance(dims, 0.3, 11, XSolMode::RandomSigns).unwrap();
        let b = generate_instance(dims, 0.3, 11, XSolMode::RandomSigns).unwrap();
        assert_eq!(a.a, b.a);
        assert_eq!(a.v, b.v);
        assert_eq!(a.x_sol, b.x_sol);
        assert_eq!(a.y, b.y);
        let c = generate_instance(dims, 0.3, 12, XSolMode::RandomSigns).unwrap();
        assert_ne!(a.a, c.a);
    }

    #[test]
    fn rejects_negative_sigma() {
        let dims = SystemDims::new(5, 1.0).unwrap();
        assert!(generate_instance(dims, -1.0, 0, XSolMode::AllPlus).is_err());
    }

    #[test]
    fn overlap_examples() {
        let x_sol = [0.5, -0.5, 0.5, 0.5];
        let neg: Vec<f64> = x_sol.iter().map(|v| -v).collect();
        assert_eq!(overlap_stats(&x_sol, &x_sol).unwrap(), OverlapStats { c1: 1.0, c2: 1.0 });
        assert_eq!(overlap_stats(&neg, &x_sol).unwrap(), OverlapStats { c1: -1.0, c2: 1.0 });
        assert_eq!(overlap_stats(&[0.0; 4], &x_sol).unwrap(), OverlapStats { c1: 0.0, c2: 0.0 });
        assert!(overlap_stats(&[0.0; 3], &x_sol).is_err());
    }

    #[test]
    fn bit_error_examples() {
        let x_sol = [0.5, -0.5, 0.5, 0.5];
        let neg: Vec<f64> = x_sol.iter().map(|v| -v).collect();
        assert_eq!(bit_error_fraction(&x_sol, &x_sol).unwrap(), 0.0);
        assert_eq!(bit_error_fraction(&neg, &x_sol).unwrap(), 1.0);
        assert_eq!(bit_error_fraction(&[0.5, 0.5, 0.5, 0.5], &x_sol).unwrap(), 0.25);
        // zero counts as +
        assert_eq!(bit_error_fraction(&[0.0, -0.1, 0.0, 0.0], &x_sol).unwrap(), 0.0);
        assert!(bit_error_fraction(&[0.5], &x_sol).is_err());
    }

    #[test]
    fn rounding_examples() {
        assert_eq!(round_to_corner(&[0.1, 0.2, 0.01, 0.3], 4), vec![0.5; 4]);
        assert_eq!(round_to_corner(&[0.0; 4], 4), vec![0.5; 4]);
        let x_sol = [0.5, -0.5, 0.5, -0.5];
        assert_eq!(round_to_corner(&x_sol, 4), x_sol.to_vec());
    }

    #[test]
    fn random_corner_examples() {
        let one = random_corner(1, 3);
        assert!(one == vec![1.0] || one == vec![-1.0]);
        assert_eq!(random_corner(10, 5), random_corner(10, 5));
        // Binomial(10⁴, ½) has sd 50, so ±200 is a 4σ band.
        let big = random_corner(10_000, 9);
        let plus = big.iter().filter(|&&v| v > 0.0).count() as f64 / 1e4;
        assert!((plus - 0.5).abs() <= 0.02);
    }
}
