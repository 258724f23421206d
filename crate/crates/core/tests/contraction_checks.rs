use clup_core::contraction::{
    contraction_run_with, contraction_step, fixed_point_residual, fixed_point_residual_with, precompute, GramMode,
    PhaseConfig,
};
use clup_core::exact_solver::{clup_inner_step, clup_run, ExactStepSettings};
use clup_core::linalg::Matrix;
use clup_core::model::{generate_instance, random_corner, snr_db_to_sigma, SystemDims, SystemInstance, XSolMode};
use clup_core::rephasing::{bundled_schedule, Variant};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn phase(r_norm: f64, gamma1_scaled: f64, c2_hat: f64, c_q2: Option<f64>) -> PhaseConfig {
    PhaseConfig {
        r_norm,
        gamma1_scaled,
        c2_hat,
        c_q2,
        i_max: 2000,
        step_tol: 1e-12,
        label: "check".into(),
    }
}

#[test]
fn two_dimensional_step_by_hand() {
    let s = 1.0 / 2f64.sqrt();
    // A = I, y = (0.9, -0.2), written as x_sol + v with sigma = 1.
    let inst = SystemInstance::from_parts(Matrix::identity(2), vec![s, -s], vec![0.9 - s, -0.2 + s], 1.0).unwrap();
    assert!((inst.y[0] - 0.9).abs() < 1e-15 && (inst.y[1] + 0.2).abs() < 1e-15);
    // gamma_hat_1 = sqrt(2)/sqrt(2) = 1, sqrt(c2_hat) = 0.5, r = 0.1*sqrt(2), c_q2 = 2.
    let cfg = phase(0.1, 2f64.sqrt(), 0.25, Some(2.0));
    for threshold in [0, 10] {
        let ops = precompute(&inst, threshold);
        let out = contraction_step(&[0.6, 0.1], &ops, &cfg, 2).unwrap();
        let denom = 2.0 - 0.1 * 2f64.sqrt();
        // raw = (2x + 0.5 (y - x)) / denom = (1.35, 0.05) / denom; the first clamps.
        assert_eq!(out[0], s);
        assert!((out[1] - 0.05 / denom).abs() < 1e-15, "{}", out[1]);
    }
}

#[test]
fn gram_modes_agree_on_20_instances() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for k in 0..20u64 {
        let n = rng.random_range(2..=512usize);
        let inst = generate_instance(SystemDims::new(n, 0.6).unwrap(), 0.3, k, XSolMode::RandomSigns).unwrap();
        let full = precompute(&inst, usize::MAX);
        let two = precompute(&inst, 0);
        assert_eq!(full.mode, GramMode::FullGram);
        assert_eq!(two.mode, GramMode::TwoMults);
        assert!(full.gram.as_ref().unwrap().is_symmetric(1e-10));
        let cfg = phase(0.1, 1.5, 0.9, Some(1.0 + 1.5 / (n as f64).sqrt() * full.lambda_max));
        let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0) / (n as f64).sqrt()).collect();
        for _ in 0..5 {
            let a = contraction_step(&x, &full, &cfg, n).unwrap();
            let b = contraction_step(&x, &two, &cfg, n).unwrap();
            let scale = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            let diff = a.iter().zip(&b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
            assert!(diff <= 1e-10 * scale, "instance {k} (n={n}): relative gap {}", diff / scale);
            x = a;
        }
    }
}

#[test]
fn noiseless_solution_is_a_fixed_point_of_every_bundled_phase() {
    let n = 60;
    let inst = generate_instance(SystemDims::new(n, 0.6).unwrap(), 0.0, 1, XSolMode::RandomSigns).unwrap();
    let ops = precompute(&inst, usize::MAX);
    for snr in [12.0, 13.0, 14.0, 15.0] {
        for phase in bundled_schedule(0.6, snr, Variant::RephasedR1).unwrap().phases {
            let cfg = PhaseConfig { i_max: 200, ..phase };
            let res = contraction_run_with(&ops, &inst, &cfg, &inst.x_sol).unwrap();
            let dist = res.x_final.iter().zip(&inst.x_sol).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(dist <= 1e-6, "{snr} dB {}: drifted {dist}", cfg.label);
        }
    }
}

/// At a converged exact run, `ĉ2 = ‖x_s‖²` and `γ̂1 = 2μr` turn the exact
/// stationarity conditions into the contraction's fixed-point equation.
#[test]
fn exact_limits_are_fixed_points_with_kkt_matched_parameters() {
    let n = 150;
    let dims = SystemDims::new(n, 0.6).unwrap();
    let settings = ExactStepSettings::default();
    let r_norm = 0.12;
    let r = r_norm * (n as f64).sqrt();
    let mut checked = 0;
    for seed in 0..6u64 {
        let inst = generate_instance(dims, snr_db_to_sigma(14.0), 300 + seed, XSolMode::RandomSigns).unwrap();
        let Ok(res) = clup_run(&inst, r, &random_corner(n, seed), 1000, 1e-11, &settings) else {
            continue;
        };
        assert!(res.converged);
        let step = clup_inner_step(&inst, &res.x_final, r, &settings).unwrap();
        let c2 = step.x.iter().map(|v| v * v).sum::<f64>();
        let matched = phase(r_norm, 2.0 * step.mu * r * (n as f64).sqrt(), c2, None);
        let fp = fixed_point_residual(&inst, &step.x, &matched).unwrap();
        assert!(fp <= 1e-8, "seed {seed}: {fp}");
        // Fixed points do not depend on c_q2.
        let ops = precompute(&inst, usize::MAX);
        let cq = ops.resolve_cq(&matched);
        let fp2 = fixed_point_residual_with(&ops, &step.x, &PhaseConfig { c_q2: Some(3.0 * cq), ..matched.clone() })
            .unwrap();
        assert!(fp2 <= 1e-8, "seed {seed}: {fp2}");
        checked += 1;
    }
    assert!(checked >= 4);
}

#[test]
fn converged_iterate_has_small_residual_and_far_corner_does_not() {
    let n = 300;
    let inst = generate_instance(SystemDims::new(n, 0.6).unwrap(), snr_db_to_sigma(15.0), 8, XSolMode::RandomSigns)
        .unwrap();
    let cfg = PhaseConfig {
        step_tol: 1e-9,
        i_max: 5000,
        ..bundled_schedule(0.6, 15.0, Variant::StandardR0).unwrap().phases[0].clone()
    };
    let ops = precompute(&inst, usize::MAX);
    let res = contraction_run_with(&ops, &inst, &cfg, &random_corner(n, 1)).unwrap();
    assert!(res.converged);
    let norm = res.x_final.iter().map(|v| v * v).sum::<f64>().sqrt();
    // One more step moves by at most the contraction factor times the last step.
    assert!(fixed_point_residual_with(&ops, &res.x_final, &cfg).unwrap() <= cfg.step_tol * (1.0 + norm));
    let far: Vec<f64> = inst.x_sol.iter().map(|v| -v).collect();
    assert!(fixed_point_residual_with(&ops, &far, &cfg).unwrap() > 0.1);
}

#[test]
fn runs_are_deterministic() {
    let n = 200;
    let inst = generate_instance(SystemDims::new(n, 0.6).unwrap(), snr_db_to_sigma(13.0), 5, XSolMode::RandomSigns)
        .unwrap();
    let cfg = bundled_schedule(0.6, 13.0, Variant::StandardR0).unwrap().phases[0].clone();
    let x0 = random_corner(n, 3);
    let a = contraction_run_with(&precompute(&inst, usize::MAX), &inst, &cfg, &x0).unwrap();
    let b = contraction_run_with(&precompute(&inst, usize::MAX), &inst, &cfg, &x0).unwrap();
    assert_eq!(a.x_final, b.x_final);
    assert_eq!(a.trajectory, b.trajectory);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn steps_stay_in_the_box(
        seed in 0u64..1000,
        n in 1usize..64,
        r_norm in 0.01f64..0.5,
        g in -3.0f64..3.0,
        c2 in 0.05f64..1.0,
        cq_scale in 1.01f64..4.0,
        snr in 0.0f64..30.0,
    ) {
        let inst = generate_instance(SystemDims::new(n, 0.8).unwrap(), snr_db_to_sigma(snr), seed, XSolMode::RandomSigns).unwrap();
        let ops = precompute(&inst, usize::MAX);
        let cfg = phase(r_norm, g, c2, Some(cq_scale * (r_norm * (n as f64).sqrt() + g.abs() * ops.lambda_max)));
        let s = 1.0 / (n as f64).sqrt();
        let mut x = random_corner(n, seed);
        for _ in 0..10 {
            x = contraction_step(&x, &ops, &cfg, n).unwrap();
            prop_assert!(x.iter().all(|v| v.abs() <= s));
        }
    }
}
