//! Monte Carlo sweeps over SNR and algorithm, with deterministic seeding and
//! order-independent aggregation.

pub mod config;
pub mod report;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::polytope_relax;
use crate::contraction::precompute;
use crate::error::{ClupError, Result};
use crate::exact_solver::{clup_run_with, ExactStepSettings, NormalEquations};
use crate::model::{
    bit_errors, generate_instance, overlap_stats, random_corner, round_to_corner, snr_db_to_sigma,
    SystemDims, SystemInstance, XSolMode,
};
use crate::rephasing::{bundled_schedule_from, run_rephased_contraction, AbortPolicy, Dataset, Schedule, Variant};

pub use config::{read_config, write_config, Algorithm, ExperimentConfig, InitMode};
pub use report::{read_report, summaries_csv, write_report, Report, CSV_HEADER};

/// Seed of trial `trial_idx` at grid point `snr_idx`.
///
/// The index pair is packed into 64 bits, xored with the base seed and passed
/// through the SplitMix64 finalizer. Every step is a bijection on `u64`, so
/// distinct `(snr_idx, trial_idx)` pairs under `2³²` never share a seed.
pub fn trial_seed(base_seed: u64, snr_idx: u32, trial_idx: u32) -> u64 {
    mix64(base_seed ^ ((snr_idx as u64) << 32 | trial_idx as u64))
}

/// Separates the starting-point stream from the instance stream.
const INIT_STREAM: u64 = 0x5eed_1417_c0de_0001;

fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Number of worker threads: explicit value, else `CLUP_THREADS`, else the
/// machine's available parallelism.
pub fn resolve_threads(explicit: Option<usize>) -> Result<usize> {
    if let Some(t) = explicit {
        return if t == 0 {
            Err(ClupError::InvalidConfig("thread count must be at least 1".into()))
        } else {
            Ok(t)
        };
    }
    match std::env::var("CLUP_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(t),
            _ => Err(ClupError::InvalidConfig(format!("CLUP_THREADS must be a positive integer, got '{v}'"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseRecord {
    pub c1: f64,
    pub c2: f64,
    pub p_err: f64,
    pub iterations: usize,
    pub converged: bool,
    pub non_convergent: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub snr_db: f64,
    pub algorithm: Algorithm,
    pub trial: usize,
    pub seed: u64,
    pub phases: Vec<PhaseRecord>,
    pub bit_errors: usize,
    pub p_err: f64,
    pub c1: f64,
    pub c2: f64,
    pub non_convergent: bool,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BerSummary {
    pub snr_db: f64,
    pub algorithm: String,
    pub trials: usize,
    pub bits: usize,
    pub bit_errors: usize,
    pub p_err_mean: f64,
    pub p_err_median: f64,
    pub c1_mean: f64,
    pub c2_mean: f64,
    pub non_convergent_count: usize,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepOutput {
    pub summaries: Vec<BerSummary>,
    /// Sorted by (SNR index, algorithm position in the config, trial).
    pub trials: Vec<TrialRecord>,
}

/// What one algorithm does at one SNR, resolved before any trial runs.
#[derive(Debug, Clone)]
enum Plan {
    Polytope { tol: f64, max_iter: usize },
    Exact { r_norm: f64, max_iter: usize, step_tol: f64 },
    Phases { schedule: Schedule, gram_threshold: usize },
}

/// Bundled schedule variant behind a contraction algorithm.
pub fn variant_of(alg: Algorithm) -> Option<Variant> {
    match alg {
        Algorithm::ClupR0 => Some(Variant::StandardR0),
        Algorithm::RephasedR1 => Some(Variant::RephasedR1),
        Algorithm::RephasedR3 => Some(Variant::RephasedR3),
        _ => None,
    }
}

fn resolve_plan(cfg: &ExperimentConfig, ds: &Dataset, alg: Algorithm, snr_db: f64) -> Result<Plan> {
    let overrides = cfg.schedule_overrides.as_ref();
    let schedule = |variant: Variant| -> Result<Schedule> {
        match overrides {
            Some(phases) => Schedule::user(phases.clone(), cfg.alpha, snr_db),
            None => bundled_schedule_from(ds, cfg.alpha, snr_db, variant),
        }
    };
    Ok(match alg {
        Algorithm::Polytope => Plan::Polytope {
            tol: cfg.polytope_tol,
            max_iter: cfg.polytope_max_iter,
        },
        Algorithm::ClupExact => Plan::Exact {
            r_norm: schedule(Variant::StandardR0)?.phases[0].r_norm,
            max_iter: cfg.exact_max_iter,
            step_tol: cfg.exact_step_tol,
        },
        other => Plan::Phases {
            schedule: schedule(variant_of(other).expect("contraction algorithm"))?,
            gram_threshold: cfg.gram_threshold,
        },
    })
}

/// Starting point of a trial, a deterministic function of the trial seed.
pub fn initial_point(mode: InitMode, inst: &SystemInstance, seed: u64) -> Vec<f64> {
    let n = inst.n();
    match mode {
        InitMode::RandomCorner => random_corner(n, mix64(seed ^ INIT_STREAM)),
        InitMode::Zero => vec![0.0; n],
        InitMode::XSol => inst.x_sol.clone(),
    }
}

fn phase_record(x: &[f64], stats: crate::model::OverlapStats, inst: &SystemInstance, iterations: usize,
                converged: bool, non_convergent: bool) -> Result<PhaseRecord> {
    let errs = bit_errors(&round_to_corner(x, inst.n()), &inst.x_sol)?;
    Ok(PhaseRecord {
        c1: stats.c1,
        c2: stats.c2,
        p_err: errs as f64 / inst.n() as f64,
        iterations,
        converged,
        non_convergent,
    })
}

fn run_plan(plan: &Plan, inst: &SystemInstance, x0: &[f64]) -> Result<(Vec<PhaseRecord>, usize)> {
    let n = inst.n();
    let (phases, x_final) = match plan {
        Plan::Polytope { tol, max_iter } => {
            let res = polytope_relax(inst, *tol, *max_iter)?;
            let stats = overlap_stats(&res.x_relaxed, &inst.x_sol)?;
            let rec = phase_record(&res.x_relaxed, stats, inst, res.iterations, res.converged, !res.converged)?;
            (vec![rec], res.x_relaxed)
        }
        Plan::Exact { r_norm, max_iter, step_tol } => {
            let normal = NormalEquations::new(inst);
            let r = r_norm * (n as f64).sqrt();
            let res = clup_run_with(&normal, inst, r, x0, *max_iter, *step_tol, &ExactStepSettings::default())?;
            let stats = *res.trajectory.last().expect("at least one step");
            let rec = phase_record(&res.x_final, stats, inst, res.iterations, res.converged, res.non_convergent)?;
            (vec![rec], res.x_final)
        }
        Plan::Phases { schedule, gram_threshold } => {
            let ops = precompute(inst, *gram_threshold);
            let res = run_rephased_contraction(&ops, inst, schedule, x0, AbortPolicy::Continue)?;
            let recs = res
                .per_phase
                .iter()
                .map(|p| {
                    let stats = *p.trajectory.last().expect("at least one step");
                    phase_record(&p.x_final, stats, inst, p.iterations, p.converged, p.non_convergent)
                })
                .collect::<Result<Vec<_>>>()?;
            (recs, res.final_x)
        }
    };
    let errs = bit_errors(&round_to_corner(&x_final, n), &inst.x_sol)?;
    Ok((phases, errs))
}

/// Runs every (SNR, algorithm, trial) combination of `config`.
///
/// Each trial's instance depends only on [`trial_seed`], and all algorithms at
/// one (SNR, trial) share that instance. Records are sorted before
/// aggregation, so the output does not depend on the thread count.
pub fn run_ber_sweep(config: &ExperimentConfig, dataset: &Dataset, threads: usize) -> Result<SweepOutput> {
    config.validate()?;
    let dims = SystemDims::new(config.n, config.alpha)?;
    let plans: Vec<Vec<Plan>> = config
        .snr_grid_db
        .iter()
        .map(|&snr| {
            config
                .algorithms
                .iter()
                .map(|&alg| resolve_plan(config, dataset, alg, snr))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| ClupError::InvalidConfig(format!("cannot start {threads} threads: {e}")))?;

    let jobs: Vec<(usize, usize)> = (0..config.snr_grid_db.len())
        .flat_map(|s| (0..config.trials).map(move |t| (s, t)))
        .collect();
    let per_job: Vec<Vec<(usize, usize, usize, TrialRecord)>> = pool.install(|| {
        jobs.par_iter()
            .map(|&(s, t)| -> Result<Vec<_>> {
                let snr_db = config.snr_grid_db[s];
                let seed = trial_seed(config.base_seed, s as u32, t as u32);
                let inst = generate_instance(dims, snr_db_to_sigma(snr_db), seed, XSolMode::RandomSigns)?;
                let x0 = initial_point(config.init, &inst, seed);
                let mut out = Vec::with_capacity(plans[s].len());
                for (a, plan) in plans[s].iter().enumerate() {
                    let algorithm = config.algorithms[a];
                    let start = Instant::now();
                    let (phases, errs) = run_plan(plan, &inst, &x0).map_err(|e| ClupError::Trial {
                        context: format!("{} at {snr_db} dB, trial {t}", algorithm.name()),
                        source: Box::new(e),
                    })?;
                    let elapsed = if config.record_timing { start.elapsed().as_secs_f64() } else { 0.0 };
                    let last = phases.last().expect("nonempty");
                    let record = TrialRecord {
                        snr_db,
                        algorithm,
                        trial: t,
                        seed,
                        bit_errors: errs,
                        p_err: errs as f64 / config.n as f64,
                        c1: last.c1,
                        c2: last.c2,
                        non_convergent: phases.iter().any(|p| p.non_convergent),
                        wall_time_s: elapsed,
                        phases,
                    };
                    out.push((s, a, t, record));
                }
                Ok(out)
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let mut keyed: Vec<(usize, usize, usize, TrialRecord)> = per_job.into_iter().flatten().collect();
    keyed.sort_by_key(|&(s, a, t, _)| (s, a, t));
    let trials: Vec<TrialRecord> = keyed.into_iter().map(|(_, _, _, r)| r).collect();
    let summaries = summarize(config, &trials);
    Ok(SweepOutput { summaries, trials })
}

/// Median of a sample; the mean of the two middle values for even sizes.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 2;
    if v.len() % 2 == 1 {
        v[k]
    } else {
        0.5 * (v[k - 1] + v[k])
    }
}

fn summarize(config: &ExperimentConfig, trials: &[TrialRecord]) -> Vec<BerSummary> {
    let mut out = Vec::new();
    for &snr_db in &config.snr_grid_db {
        for &alg in &config.algorithms {
            let group: Vec<&TrialRecord> = trials
                .iter()
                .filter(|r| r.algorithm == alg && r.snr_db.to_bits() == snr_db.to_bits())
                .collect();
            out.push(summarize_group(snr_db, alg.name(), config.n, &group));
        }
    }
    out
}

/// Aggregates one (SNR, algorithm) group. Records are put in trial order
/// first, so floating-point sums do not depend on the order of `group`.
pub fn summarize_group(snr_db: f64, algorithm: &str, n: usize, group: &[&TrialRecord]) -> BerSummary {
    let mut sorted = group.to_vec();
    sorted.sort_by_key(|r| (r.trial, r.seed));
    let group = &sorted[..];
    let trials = group.len();
    let bits = trials * n;
    let bit_errors: usize = group.iter().map(|r| r.bit_errors).sum();
    let k = trials.max(1) as f64;
    let fractions: Vec<f64> = group.iter().map(|r| r.p_err).collect();
    BerSummary {
        snr_db,
        algorithm: algorithm.to_string(),
        trials,
        bits,
        bit_errors,
        p_err_mean: if bits == 0 { 0.0 } else { bit_errors as f64 / bits as f64 },
        p_err_median: median(&fractions),
        c1_mean: group.iter().map(|r| r.c1).sum::<f64>() / k,
        c2_mean: group.iter().map(|r| r.c2).sum::<f64>() / k,
        non_convergent_count: group.iter().filter(|r| r.non_convergent).count(),
        wall_time_s: group.iter().map(|r| r.wall_time_s).sum(),
    }
}

/// Per-phase summary (phase `k` of every trial in `group`), used for
/// rephasing reports.
pub fn phase_summary(group: &[&TrialRecord], phase: usize) -> Option<(f64, f64, f64, f64)> {
    let recs: Vec<&PhaseRecord> = group.iter().filter_map(|r| r.phases.get(phase)).collect();
    if recs.is_empty() {
        return None;
    }
    let k = recs.len() as f64;
    let p: Vec<f64> = recs.iter().map(|r| r.p_err).collect();
    Some((
        p.iter().sum::<f64>() / k,
        median(&p),
        recs.iter().map(|r| r.c1).sum::<f64>() / k,
        recs.iter().map(|r| r.c2).sum::<f64>() / k,
    ))
}
