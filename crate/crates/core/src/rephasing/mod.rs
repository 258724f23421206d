//! Multi-phase CLuP: each phase is a full run with its own radius and gain,
//! warm-started from the previous phase's limit.

pub mod dataset;

use serde::{Deserialize, Serialize};

use crate::contraction::{contraction_run_with, precompute, PhaseConfig, PrecomputedOperators, DEFAULT_GRAM_THRESHOLD};
use crate::error::{ClupError, Result};
use crate::exact_solver::{clup_run_with, ClupResult, ExactStepSettings, NormalEquations};
use crate::model::{bit_error_fraction, round_to_corner, OverlapStats, SystemInstance};

pub use dataset::{load_bundled_dataset, load_dataset, Dataset, Role, RowKind, StationaryRecord};

/// Iteration cap for bundled phases.
pub const BUNDLED_I_MAX: usize = 5000;
/// Step tolerance for bundled phases.
pub const BUNDLED_STEP_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleSource {
    Bundled,
    User,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    StandardR0,
    RephasedR1,
    RephasedR3,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::StandardR0 => "standard_r0",
            Variant::RephasedR1 => "rephased_r1",
            Variant::RephasedR3 => "rephased_r3",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub phases: Vec<PhaseConfig>,
    pub alpha: f64,
    pub snr_db: f64,
    pub source: ScheduleSource,
    /// Table row each bundled phase was read from, in phase order.
    #[serde(default)]
    pub citations: Vec<String>,
}

impl Schedule {
    pub fn user(phases: Vec<PhaseConfig>, alpha: f64, snr_db: f64) -> Result<Self> {
        let s = Schedule {
            phases,
            alpha,
            snr_db,
            source: ScheduleSource::User,
            citations: Vec::new(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.phases.is_empty() {
            return Err(ClupError::InvalidConfig("schedule has no phases".into()));
        }
        for p in &self.phases {
            p.validate()?;
        }
        if self.source == ScheduleSource::Bundled && self.citations.len() != self.phases.len() {
            return Err(ClupError::InvalidConfig("bundled schedule is missing citations".into()));
        }
        Ok(())
    }
}

const SUPPORTED: &str = "alpha=0.6 with snr_db in {12,13,14,15} for standard_r0 and rephased_r1; \
                         alpha=0.6, snr_db=12 for rephased_r3";

fn same(a: f64, b: f64) -> bool {
    (a - b).abs() < 1e-9
}

fn phase_from_row(row: &StationaryRecord, label: String) -> Result<PhaseConfig> {
    let need = |v: Option<f64>, what: &str| {
        v.ok_or_else(|| ClupError::Dataset {
            path: dataset::BUNDLED_NAME.into(),
            reason: format!("table {} row '{}' has no {what}", row.table_id, row.label),
        })
    };
    Ok(PhaseConfig {
        r_norm: need(row.r_norm, "r_norm")?,
        gamma1_scaled: need(row.gamma1, "gamma1")?,
        c2_hat: need(row.c2, "c2")?,
        c_q2: None,
        i_max: BUNDLED_I_MAX,
        step_tol: BUNDLED_STEP_TOL,
        label,
    })
}

/// Phase parameters read from the bundled tables. `ĉ2` is the theoretical
/// target `c2` of each phase.
pub fn bundled_schedule(alpha: f64, snr_db: f64, variant: Variant) -> Result<Schedule> {
    bundled_schedule_from(&load_bundled_dataset()?, alpha, snr_db, variant)
}

pub fn bundled_schedule_from(ds: &Dataset, alpha: f64, snr_db: f64, variant: Variant) -> Result<Schedule> {
    let unsupported = || ClupError::UnsupportedSchedule {
        alpha,
        snr_db,
        variant: variant.name().into(),
        supported: SUPPORTED.into(),
    };
    if !same(alpha, 0.6) {
        return Err(unsupported());
    }
    let theory_phase = |table: &str, phase: usize| {
        ds.find(table, |r| {
            r.kind == RowKind::Theory && r.phase == Some(phase) && same(r.snr_db, snr_db)
        })
    };
    // (table, phase) for every phase of the schedule.
    let rows: Vec<(&str, usize)> = match (variant, snr_db.round() as i64) {
        _ if snr_db.fract() != 0.0 => return Err(unsupported()),
        (Variant::StandardR0, 12..=15) => vec![("1", 0)],
        (Variant::RephasedR1, 12) => vec![("1", 0), ("13", 1)],
        (Variant::RephasedR1, 13) => vec![("1", 0), ("5", 1)],
        (Variant::RephasedR1, 14) => vec![("1", 0), ("6", 1)],
        (Variant::RephasedR1, 15) => vec![("1", 0), ("7", 1)],
        (Variant::RephasedR3, 12) => vec![("13", 0), ("13", 1), ("13", 2), ("13", 3)],
        _ => return Err(unsupported()),
    };
    let mut phases = Vec::with_capacity(rows.len());
    let mut citations = Vec::with_capacity(rows.len());
    for (k, (table, phase)) in rows.into_iter().enumerate() {
        let row = theory_phase(table, phase).ok_or_else(unsupported)?;
        phases.push(phase_from_row(row, format!("phase {k}"))?);
        citations.push(format!("table {table}, {} (theory)", row.label_with_snr()));
    }
    let s = Schedule {
        phases,
        alpha,
        snr_db,
        source: ScheduleSource::Bundled,
        citations,
    };
    s.validate()?;
    Ok(s)
}

impl StationaryRecord {
    fn label_with_snr(&self) -> String {
        if self.label.contains("dB") {
            self.label.clone()
        } else {
            format!("{} dB {}", self.snr_db, self.label)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Engine {
    Exact,
    Contraction,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbortPolicy {
    Abort,
    #[default]
    Continue,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RephasedResult {
    pub per_phase: Vec<ClupResult>,
    /// Bit-error fraction of each phase's final iterate.
    pub per_phase_p_err: Vec<f64>,
    pub final_x: Vec<f64>,
    /// Statistics of the last constrained-step output.
    pub final_stats: OverlapStats,
    pub p_err_observed: f64,
    /// Index of the non-convergent phase that stopped the run under [`AbortPolicy::Abort`].
    pub aborted_at: Option<usize>,
}

pub fn run_rephased(
    instance: &SystemInstance,
    schedule: &Schedule,
    x0: &[f64],
    engine: Engine,
    abort_policy: AbortPolicy,
) -> Result<RephasedResult> {
    match engine {
        Engine::Contraction => {
            let ops = precompute(instance, DEFAULT_GRAM_THRESHOLD);
            run_rephased_contraction(&ops, instance, schedule, x0, abort_policy)
        }
        Engine::Exact => {
            let normal = NormalEquations::new(instance);
            let settings = ExactStepSettings::default();
            run_phases(instance, schedule, x0, abort_policy, |cfg, x| {
                let r = cfg.radius(instance.n());
                clup_run_with(&normal, instance, r, x, cfg.i_max, cfg.step_tol, &settings)
            })
        }
    }
}

/// Contraction engine on operators shared across phases.
pub fn run_rephased_contraction(
    ops: &PrecomputedOperators<'_>,
    instance: &SystemInstance,
    schedule: &Schedule,
    x0: &[f64],
    abort_policy: AbortPolicy,
) -> Result<RephasedResult> {
    run_phases(instance, schedule, x0, abort_policy, |cfg, x| {
        contraction_run_with(ops, instance, cfg, x)
    })
}

fn run_phases(
    instance: &SystemInstance,
    schedule: &Schedule,
    x0: &[f64],
    abort_policy: AbortPolicy,
    mut run: impl FnMut(&PhaseConfig, &[f64]) -> Result<ClupResult>,
) -> Result<RephasedResult> {
    schedule.validate()?;
    let n = instance.n();
    let mut x = x0.to_vec();
    let mut per_phase = Vec::with_capacity(schedule.phases.len());
    let mut per_phase_p_err = Vec::with_capacity(schedule.phases.len());
    let mut aborted_at = None;
    for (k, cfg) in schedule.phases.iter().enumerate() {
        let res = run(cfg, &x)?;
        x.clone_from(&res.x_final);
        per_phase_p_err.push(bit_error_fraction(&round_to_corner(&x, n), &instance.x_sol)?);
        let stop = res.non_convergent && abort_policy == AbortPolicy::Abort;
        per_phase.push(res);
        if stop {
            aborted_at = Some(k);
            break;
        }
    }
    let last = per_phase.last().expect("schedule is nonempty");
    let final_stats = *last.trajectory.last().expect("every run takes at least one step");
    Ok(RephasedResult {
        p_err_observed: *per_phase_p_err.last().expect("nonempty"),
        per_phase,
        per_phase_p_err,
        final_x: x,
        final_stats,
        aborted_at,
    })
}
