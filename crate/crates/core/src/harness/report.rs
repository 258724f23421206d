use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use super::{BerSummary, SweepOutput, TrialRecord};
use crate::error::{ClupError, Result};
use crate::rephasing::Dataset;

pub const ARTIFACT_VERSION: &str = concat!("clup-core ", env!("CARGO_PKG_VERSION"), " report v1");

pub const RNG_DRAW_ORDER: &str = "ChaCha8Rng::seed_from_u64(trial_seed): A (m*n standard normals, row-major), \
then v (m standard normals), then x_sol signs (n bools); random-corner start uses a second ChaCha8 stream \
seeded from splitmix64(trial_seed ^ 0x5eed1417c0de0001)";

pub const OVERLAP_CONVENTION: &str = "c1 = x_sol.x and c2 = ||x||^2 of the last constrained-step output, \
before any normalization";

pub const CSV_HEADER: &str =
    "snr_db,algorithm,trials,bits,bit_errors,p_err_mean,p_err_median,c1_mean,c2_mean,non_convergent,wall_time_s";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetRef {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Report {
    pub artifact_version: String,
    pub rng_draw_order: String,
    pub overlap_convention: String,
    pub dataset: DatasetRef,
    pub config: ExperimentConfig,
    pub summaries: Vec<BerSummary>,
    pub trials: Vec<TrialRecord>,
}

impl Report {
    pub fn new(config: &ExperimentConfig, dataset: &Dataset, output: SweepOutput) -> Report {
        Report {
            artifact_version: ARTIFACT_VERSION.to_string(),
            rng_draw_order: RNG_DRAW_ORDER.to_string(),
            overlap_convention: OVERLAP_CONVENTION.to_string(),
            dataset: DatasetRef {
                name: dataset.manifest.name.clone(),
                sha256: dataset.manifest.sha256.clone(),
            },
            config: config.clone(),
            summaries: output.summaries,
            trials: output.trials,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report always serializes") + "\n"
    }
}

/// One row per (SNR, algorithm). Floats use Rust's shortest round-trip
/// formatting, so the text is a pure function of the values.
pub fn summaries_csv(summaries: &[BerSummary]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for s in summaries {
        writeln!(
            out,
            "{},{},{},{},{},{:e},{:e},{},{},{},{}",
            s.snr_db,
            s.algorithm,
            s.trials,
            s.bits,
            s.bit_errors,
            s.p_err_mean,
            s.p_err_median,
            s.c1_mean,
            s.c2_mean,
            s.non_convergent_count,
            s.wall_time_s
        )
        .expect("writing to a String");
    }
    out
}

/// Path of the CSV written next to a JSON report: same stem, `.csv` extension.
pub fn companion_csv_path(json_path: &Path) -> PathBuf {
    json_path.with_extension("csv")
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| ClupError::Io {
            path: dir.display().to_string(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| ClupError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes the JSON report to `path` and the summary CSV next to it.
/// Returns the CSV path.
pub fn write_report(report: &Report, path: &Path) -> Result<PathBuf> {
    write_text(path, &report.to_json())?;
    let csv = companion_csv_path(path);
    if csv != path {
        write_text(&csv, &summaries_csv(&report.summaries))?;
    }
    Ok(csv)
}

pub fn read_report(path: &Path) -> Result<Report> {
    let text = std::fs::read_to_string(path).map_err(|source| ClupError::Io {
        path: path.display().to_string(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|e| ClupError::Schema {
        path: path.display().to_string(),
        reason: e.to_string(),
    })
}
