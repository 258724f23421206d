//! Closed-form ML objective `ξ(α, σ; c1)`, its derivatives in `c1`, and the
//! structure of its minimizers.
//!
//! ```text
//!   ξ   = √α √(2 − 2c1 + σ²) − √(2/π) exp(−erfinv(−c1)²)
//!   ξ'  = −√α / √(2 − 2c1 + σ²) − √2 erfinv(−c1)
//!   ξ'' = −√α / (2 − 2c1 + σ²)^{3/2} + √(π/2) exp(erfinv(−c1)²)
//! ```

use std::f64::consts::{FRAC_2_SQRT_PI, PI, SQRT_2};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{ClupError, Result};
use crate::model::snr_db_to_sigma;

/// Default search interval for `c1`, kept inside the domain of `erfinv`.
pub const C1_LO: f64 = -0.999_999;
pub const C1_HI: f64 = 0.999_999;
pub const DEFAULT_GRID_N: usize = 20_000;

const ROOT_TOL: f64 = 1e-9;
const MERGE_TOL: f64 = 1e-8;

/// Inverse error function on `(−1, 1)`.
///
/// A rational starting point is polished with Halley steps on `erf(x) − p`;
/// the result satisfies `|erf(x) − p| ≤ 1e-12`. The computation runs on `|p|` so that `erfinv(−p) = −erfinv(p)` holds exactly.
pub fn erfinv(p: f64) -> Result<f64> {
    if !(p.abs() < 1.0) {
        return Err(ClupError::Domain(format!("erfinv needs |p| < 1, got {p}")));
    }
    if p == 0.0 {
        return Ok(0.0);
    }
    let a = p.abs();
    let mut x = erfinv_initial(a);
    for _ in 0..8 {
        let f = libm::erf(x) - a;
        if f == 0.0 {
            break;
        }
        let fp = FRAC_2_SQRT_PI * (-x * x).exp();
        // Halley: erf'' = −2x erf'.
        let step = f / fp;
        let next = x - step / (1.0 + x * step);
        if next == x {
            break;
        }
        x = next;
    }
    Ok(x.copysign(p))
}

/// Starting point from Acklam's rational approximation of the normal
/// quantile (relative error about 1e-9): `erfinv(a) = Φ⁻¹((1 + a)/2)/√2`.
fn erfinv_initial(a: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    let horner = |c: &[f64], x: f64| c.iter().fold(0.0, |acc, &k| acc * x + k);
    // Upper-tail probability, exact for a in [0, 1).
    let tail = 0.5 * (1.0 - a);
    let z = if tail < 0.024_25 {
        let q = (-2.0 * tail.ln()).sqrt();
        -horner(&C, q) / (horner(&D, q) * q + 1.0)
    } else {
        let q = 0.5 * a;
        let r = q * q;
        horner(&A, r) * q / (horner(&B, r) * r + 1.0)
    };
    z / SQRT_2
}

fn check_domain(alpha: f64, sigma: f64, c1: f64) -> Result<f64> {
    if !(alpha > 0.0) || !alpha.is_finite() {
        return Err(ClupError::Domain(format!("alpha must be positive, got {alpha}")));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(ClupError::Domain(format!("sigma must be nonnegative, got {sigma}")));
    }
    if !(c1.abs() < 1.0) {
        return Err(ClupError::Domain(format!("c1 must lie in (-1, 1), got {c1}")));
    }
    let s = 2.0 - 2.0 * c1 + sigma * sigma;
    if !(s > 0.0) {
        return Err(ClupError::Domain(format!("2 - 2c1 + sigma^2 = {s} is not positive")));
    }
    Ok(s)
}

pub fn xi_ml(alpha: f64, sigma: f64, c1: f64) -> Result<f64> {
    let s = check_domain(alpha, sigma, c1)?;
    let u = erfinv(-c1)?;
    Ok(alpha.sqrt() * s.sqrt() - (2.0 / PI).sqrt() * (-u * u).exp())
}

pub fn xi_ml_d1(alpha: f64, sigma: f64, c1: f64) -> Result<f64> {
    let s = check_domain(alpha, sigma, c1)?;
    Ok(-alpha.sqrt() / s.sqrt() - SQRT_2 * erfinv(-c1)?)
}

pub fn xi_ml_d2(alpha: f64, sigma: f64, c1: f64) -> Result<f64> {
    let s = check_domain(alpha, sigma, c1)?;
    let u = erfinv(-c1)?;
    Ok(-alpha.sqrt() / (s * s.sqrt()) + (PI / 2.0).sqrt() * (u * u).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    LocalMin,
    LocalMax,
    /// Endpoint of the search interval where `ξ` is still decreasing outward.
    Boundary,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryPoint {
    pub alpha: f64,
    pub sigma: f64,
    pub c1: f64,
    pub xi: f64,
    pub d1: f64,
    pub d2: f64,
    pub kind: PointKind,
}

impl TheoryPoint {
    fn at(alpha: f64, sigma: f64, c1: f64, kind: Option<PointKind>) -> Result<Self> {
        let d2 = xi_ml_d2(alpha, sigma, c1)?;
        let kind = kind.unwrap_or(if d2 > 0.0 { PointKind::LocalMin } else { PointKind::LocalMax });
        Ok(TheoryPoint {
            alpha,
            sigma,
            c1,
            xi: xi_ml(alpha, sigma, c1)?,
            d1: xi_ml_d1(alpha, sigma, c1)?,
            d2,
            kind,
        })
    }

    /// Minimizer candidate: a local minimum or a boundary infimum.
    pub fn is_minimum(&self) -> bool {
        matches!(self.kind, PointKind::LocalMin | PointKind::Boundary)
    }
}

/// Stationary points of `ξ` in `[c1_lo, c1_hi]`, in increasing `c1`.
///
/// Sign changes of `ξ'` on a uniform grid are refined by bisection until
/// `|ξ'| ≤ 1e-9` or the bracket cannot be split further in `f64`. An endpoint
/// where `ξ` keeps decreasing outward is reported with kind `Boundary`.
pub fn find_stationary_points(
    alpha: f64,
    sigma: f64,
    c1_lo: f64,
    c1_hi: f64,
    grid_n: usize,
) -> Result<Vec<TheoryPoint>> {
    if !(-1.0 < c1_lo && c1_lo < c1_hi && c1_hi < 1.0) {
        return Err(ClupError::Domain(format!(
            "need -1 < c1_lo < c1_hi < 1, got [{c1_lo}, {c1_hi}]"
        )));
    }
    if grid_n < 100 {
        return Err(ClupError::InvalidConfig(format!("grid_n must be at least 100, got {grid_n}")));
    }
    let d1 = |c: f64| xi_ml_d1(alpha, sigma, c);
    let h = (c1_hi - c1_lo) / grid_n as f64;
    let mut points: Vec<TheoryPoint> = Vec::new();
    let mut push = |p: TheoryPoint| {
        if points.last().is_none_or(|q| (p.c1 - q.c1).abs() > MERGE_TOL) {
            points.push(p);
        }
    };
    let first = d1(c1_lo)?;
    if first > 0.0 {
        push(TheoryPoint::at(alpha, sigma, c1_lo, Some(PointKind::Boundary))?);
    }
    let (mut a, mut fa) = (c1_lo, first);
    for i in 1..=grid_n {
        let b = if i == grid_n { c1_hi } else { c1_lo + i as f64 * h };
        let fb = d1(b)?;
        if fa == 0.0 {
            push(TheoryPoint::at(alpha, sigma, a, None)?);
        } else if fa.signum() != fb.signum() && fb != 0.0 {
            push(TheoryPoint::at(alpha, sigma, bisect(&d1, a, b, fa)?, None)?);
        }
        a = b;
        fa = fb;
    }
    if fa == 0.0 {
        push(TheoryPoint::at(alpha, sigma, c1_hi, None)?);
    } else if fa < 0.0 {
        push(TheoryPoint::at(alpha, sigma, c1_hi, Some(PointKind::Boundary))?);
    }
    Ok(points)
}

fn bisect(f: &impl Fn(f64) -> Result<f64>, mut a: f64, mut b: f64, mut fa: f64) -> Result<f64> {
    loop {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            return Ok(m);
        }
        let fm = f(m)?;
        if fm.abs() <= ROOT_TOL {
            return Ok(m);
        }
        if fm.signum() == fa.signum() {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
}

/// `(global, high_branch)`: the minimizer with the smallest `ξ` and the one
/// with the largest `c1`. Boundary infima count as minimizers.
pub fn global_and_local_min(alpha: f64, sigma: f64) -> Result<(TheoryPoint, TheoryPoint)> {
    let mins: Vec<TheoryPoint> = find_stationary_points(alpha, sigma, C1_LO, C1_HI, DEFAULT_GRID_N)?
        .into_iter()
        .filter(TheoryPoint::is_minimum)
        .collect();
    let global = mins
        .iter()
        .copied()
        .min_by(|a, b| a.xi.total_cmp(&b.xi))
        .ok_or(ClupError::NoStationaryMinimum { alpha, sigma })?;
    let high = *mins.last().expect("nonempty");
    Ok((global, high))
}

fn global_on_high_branch(alpha: f64, snr_db: f64) -> Result<bool> {
    let (g, h) = global_and_local_min(alpha, snr_db_to_sigma(snr_db))?;
    Ok(g.c1 == h.c1)
}

/// SNR (dB) where the global minimizer jumps to the high-`c1` branch.
pub fn find_glitch_snr(alpha: f64, snr_lo_db: f64, snr_hi_db: f64, tol_db: f64) -> Result<f64> {
    if !(snr_lo_db < snr_hi_db) || !(tol_db > 0.0) {
        return Err(ClupError::InvalidConfig(format!(
            "need lo < hi and tol > 0, got [{snr_lo_db}, {snr_hi_db}], tol {tol_db}"
        )));
    }
    let (mut lo, mut hi) = (snr_lo_db, snr_hi_db);
    let at_lo = global_on_high_branch(alpha, lo)?;
    if at_lo == global_on_high_branch(alpha, hi)? {
        return Err(ClupError::NoBranchChange {
            lo_db: snr_lo_db,
            hi_db: snr_hi_db,
        });
    }
    while hi - lo > tol_db {
        let mid = 0.5 * (lo + hi);
        if global_on_high_branch(alpha, mid)? == at_lo {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveMode {
    Global,
    LocalHighBranch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Low,
    High,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub snr_db: f64,
    pub c1: f64,
    pub xi: f64,
    pub branch: Branch,
}

pub fn ml_curve(alpha: f64, snr_grid_db: &[f64], mode: CurveMode) -> Result<Vec<CurvePoint>> {
    if snr_grid_db.is_empty() {
        return Err(ClupError::InvalidConfig("SNR grid is empty".into()));
    }
    snr_grid_db
        .iter()
        .map(|&snr_db| {
            let (g, h) = global_and_local_min(alpha, snr_db_to_sigma(snr_db)).map_err(|e| {
                ClupError::Domain(format!("at {snr_db} dB: {e}"))
            })?;
            let (p, branch) = match mode {
                CurveMode::LocalHighBranch => (h, Branch::High),
                CurveMode::Global if g.c1 == h.c1 => (g, Branch::High),
                CurveMode::Global => (g, Branch::Low),
            };
            Ok(CurvePoint {
                snr_db,
                c1: p.c1,
                xi: p.xi,
                branch,
            })
        })
        .collect()
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("snr_db,c1,xi,branch\n");
    for p in points {
        let branch = match p.branch {
            Branch::Low => "low",
            Branch::High => "high",
        };
        let _ = writeln!(out, "{},{},{},{}", p.snr_db, p.c1, p.xi, branch);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erfinv_basics() {
        assert_eq!(erfinv(0.0).unwrap(), 0.0);
        assert!((erfinv(0.842_700_792_949_714_9).unwrap() - 1.0).abs() < 1e-12);
        assert!(erfinv(1.0).is_err());
        assert!(erfinv(-1.0).is_err());
        assert!(erfinv(f64::NAN).is_err());
        for p in [1e-300, 0.1, 0.5, 0.9, 0.999, 1.0 - 1e-9] {
            assert_eq!(erfinv(-p).unwrap(), -erfinv(p).unwrap());
        }
    }

    #[test]
    fn erfinv_round_trip_on_grid() {
        for i in 0..=1000 {
            let p = -0.999 + 1.998 * i as f64 / 1000.0;
            let x = erfinv(p).unwrap();
            assert!((libm::erf(x) - p).abs() <= 1e-12, "p={p}");
        }
    }

    #[test]
    fn xi_at_zero_overlap() {
        let v = xi_ml(0.6, 1.0, 0.0).unwrap();
        assert!((v - 0.543_756_225_7).abs() < 1e-10);
        let d1 = xi_ml_d1(0.6, 1.0, 0.0).unwrap();
        assert!((d1 + 0.6f64.sqrt() / 3.0f64.sqrt()).abs() < 1e-15);
        let d2 = xi_ml_d2(0.6, 1.0, 0.0).unwrap();
        assert!((d2 - (-(0.6f64.sqrt()) / 3.0f64.powf(1.5) + (PI / 2.0).sqrt())).abs() < 1e-15);
    }

    #[test]
    fn domain_errors() {
        assert!(xi_ml(0.6, 0.1, 1.0).is_err());
        assert!(xi_ml(0.0, 0.1, 0.5).is_err());
        assert!(xi_ml(0.6, -0.1, 0.5).is_err());
        assert!(xi_ml_d1(0.6, 0.1, -1.0).is_err());
        assert!(find_stationary_points(0.6, 0.1, 0.5, 0.4, 1000).is_err());
        assert!(find_stationary_points(0.6, 0.1, -0.9, 0.9, 10).is_err());
    }

    #[test]
    fn branch_exchange_between_13_and_15_db() {
        let (g13, h13) = global_and_local_min(0.6, snr_db_to_sigma(13.0)).unwrap();
        assert!(g13.c1 < 0.7 && h13.c1 > 0.99);
        let (g15, h15) = global_and_local_min(0.6, snr_db_to_sigma(15.0)).unwrap();
        assert_eq!(g15.c1, h15.c1);
    }

    #[test]
    fn minima_satisfy_point_invariants() {
        let pts = find_stationary_points(0.6, snr_db_to_sigma(14.0), C1_LO, C1_HI, DEFAULT_GRID_N).unwrap();
        let kinds: Vec<PointKind> = pts.iter().map(|p| p.kind).collect();
        assert_eq!(kinds, vec![PointKind::LocalMin, PointKind::LocalMax, PointKind::LocalMin]);
        for p in pts.iter().filter(|p| p.kind == PointKind::LocalMin) {
            assert!(p.d1.abs() <= 1e-9 && p.d2 > 0.0);
        }
    }

    #[test]
    fn boundary_reported_past_the_cap() {
        let pts = find_stationary_points(0.6, snr_db_to_sigma(18.0), C1_LO, C1_HI, DEFAULT_GRID_N).unwrap();
        let last = pts.last().unwrap();
        assert_eq!(last.kind, PointKind::Boundary);
        assert_eq!(last.c1, C1_HI);
    }

    #[test]
    fn glitch_errors() {
        assert!(matches!(find_glitch_snr(0.6, 15.0, 16.0, 0.01), Err(ClupError::NoBranchChange { .. })));
        assert!(find_glitch_snr(0.6, 16.0, 13.0, 0.01).is_err());
    }

    #[test]
    fn curve_modes_and_csv() {
        let grid = [13.0, 15.0];
        let g = ml_curve(0.6, &grid, CurveMode::Global).unwrap();
        let h = ml_curve(0.6, &grid, CurveMode::LocalHighBranch).unwrap();
        assert_eq!(g[0].branch, Branch::Low);
        assert_ne!(g[0].c1, h[0].c1);
        assert_eq!(g[1], h[1]);
        let csv = curve_csv(&g);
        assert!(csv.starts_with("snr_db,c1,xi,branch\n13,"));
        assert_eq!(csv.lines().count(), 3);
        assert!(ml_curve(0.6, &[], CurveMode::Global).is_err());
    }
}
