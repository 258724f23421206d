use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::contraction::PhaseConfig;
use crate::error::{ClupError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Polytope,
    ClupExact,
    ClupR0,
    RephasedR1,
    RephasedR3,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Polytope => "polytope",
            Algorithm::ClupExact => "clup_exact",
            Algorithm::ClupR0 => "clup_r0",
            Algorithm::RephasedR1 => "rephased_r1",
            Algorithm::RephasedR3 => "rephased_r3",
        }
    }

    pub const ALL: [Algorithm; 5] = [
        Algorithm::Polytope,
        Algorithm::ClupExact,
        Algorithm::ClupR0,
        Algorithm::RephasedR1,
        Algorithm::RephasedR3,
    ];

    pub fn parse(name: &str) -> Option<Algorithm> {
        Algorithm::ALL.into_iter().find(|a| a.name() == name)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Uniform random point of `{±1/√n}ⁿ`, seeded from the trial seed.
    #[default]
    RandomCorner,
    Zero,
    /// Start at the true signal (sanity checks only).
    XSol,
}

fn default_exact_max_iter() -> usize {
    100
}

fn default_exact_step_tol() -> f64 {
    1e-8
}

fn default_polytope_tol() -> f64 {
    1e-6
}

fn default_polytope_max_iter() -> usize {
    20_000
}

fn default_gram_threshold() -> usize {
    crate::contraction::DEFAULT_GRAM_THRESHOLD
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub alpha: f64,
    pub n: usize,
    pub snr_grid_db: Vec<f64>,
    pub algorithms: Vec<Algorithm>,
    pub trials: usize,
    pub base_seed: u64,
    /// Replaces the bundled phases for every SNR and contraction algorithm;
    /// the first phase's radius also drives `clup_exact`.
    #[serde(default)]
    pub schedule_overrides: Option<Vec<PhaseConfig>>,
    pub output_path: String,
    #[serde(default)]
    pub init: InitMode,
    #[serde(default = "default_exact_max_iter")]
    pub exact_max_iter: usize,
    #[serde(default = "default_exact_step_tol")]
    pub exact_step_tol: f64,
    #[serde(default = "default_polytope_tol")]
    pub polytope_tol: f64,
    #[serde(default = "default_polytope_max_iter")]
    pub polytope_max_iter: usize,
    /// Largest `n` for which the contraction solvers materialize `AᵀA`.
    #[serde(default = "default_gram_threshold")]
    pub gram_threshold: usize,
    /// Wall-clock timings break byte-identical reports, so they are opt-in.
    #[serde(default)]
    pub record_timing: bool,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ClupError::InvalidConfig(m));
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.snr_grid_db.is_empty() {
            return bad("snr_grid_db must not be empty".into());
        }
        if let Some(s) = self.snr_grid_db.iter().find(|s| !s.is_finite()) {
            return bad(format!("snr_grid_db contains {s}"));
        }
        if self.algorithms.is_empty() {
            return bad("algorithms must not be empty".into());
        }
        if self.n == 0 {
            return bad("n must be at least 1".into());
        }
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return bad(format!("alpha must be positive, got {}", self.alpha));
        }
        if self.snr_grid_db.len() > u32::MAX as usize || self.trials > u32::MAX as usize {
            return bad("grid or trial count exceeds the seed index space".into());
        }
        if let Some(phases) = &self.schedule_overrides {
            if phases.is_empty() {
                return bad("schedule_overrides must not be empty when present".into());
            }
            for p in phases {
                p.validate()?;
            }
        }
        if self.exact_max_iter == 0 || self.polytope_max_iter == 0 {
            return bad("iteration caps must be at least 1".into());
        }
        if self.init == InitMode::Zero && self.algorithms.contains(&Algorithm::ClupExact) {
            return bad("clup_exact needs a nonzero starting point; use init random_corner or x_sol".into());
        }
        Ok(())
    }
}

pub fn parse_config(text: &str, origin: &str) -> Result<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| ClupError::Schema {
        path: origin.to_string(),
        reason: e.to_string(),
    })?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(path).map_err(|source| ClupError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_config(&text, &path.display().to_string())
}

pub fn write_config(config: &ExperimentConfig, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(config).expect("config always serializes");
    std::fs::write(path, text + "\n").map_err(|source| ClupError::Io {
        path: path.display().to_string(),
        source,
    })
}
