//! Bundled stationary-point and simulation tables.
//!
//! The file is data, not derived output: every row is transcribed as printed.
//! The manifest carries the row count and a SHA-256 over the canonical JSON
//! serialization of the rows, so any edit to the data is detected on load.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{ClupError, Result};

pub const BUNDLED_NAME: &str = "clup_paper_tables.json";
const BUNDLED: &str = include_str!("../../data/clup_paper_tables.json");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// Low-overlap stationary point that a random start escapes.
    Lower,
    /// Intermediate stationary point that can capture the iteration.
    Trap,
    /// The point a correctly configured phase converges to.
    Target,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowKind {
    Theory,
    Simulated,
}

/// One printed row. Columns a table does not have are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryRecord {
    pub table_id: String,
    pub label: String,
    pub kind: RowKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
    pub alpha: f64,
    pub snr_db: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    /// `γ1` for stationary-point tables, `γ̂1·√n` for simulation tables.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_err: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_norm: Option<f64>,
}

impl StationaryRecord {
    fn check(&self) -> std::result::Result<(), String> {
        let within = |v: Option<f64>, lo: f64, hi: f64, name: &str| match v {
            Some(x) if !(lo..=hi).contains(&x) => Err(format!("{name}={x} outside [{lo}, {hi}]")),
            _ => Ok(()),
        };
        within(self.p_err, 0.0, 1.0, "p_err")?;
        within(self.c1, -1.0, 1.0, "c1")?;
        within(self.c2, 0.0, 1.0 + 1e-6, "c2")?;
        if let Some(r) = self.r_norm {
            if !(r > 0.0) {
                return Err(format!("r_norm={r} must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub version: u32,
    pub row_count: usize,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub manifest: Manifest,
    pub rows: Vec<StationaryRecord>,
}

impl Dataset {
    /// Hex SHA-256 of the compact JSON serialization of `rows`.
    pub fn rows_checksum(rows: &[StationaryRecord]) -> String {
        let bytes = serde_json::to_vec(rows).expect("records always serialize");
        hex::encode(Sha256::digest(bytes))
    }

    pub fn table(&self, table_id: &str) -> Vec<&StationaryRecord> {
        self.rows.iter().filter(|r| r.table_id == table_id).collect()
    }

    pub fn table_ids(&self) -> Vec<&str> {
        let mut ids: Vec<&str> = Vec::new();
        for r in &self.rows {
            if !ids.contains(&r.table_id.as_str()) {
                ids.push(&r.table_id);
            }
        }
        ids
    }

    /// The unique row of `table_id` matching `pred`.
    pub fn find(
        &self,
        table_id: &str,
        pred: impl Fn(&StationaryRecord) -> bool,
    ) -> Option<&StationaryRecord> {
        let mut it = self.rows.iter().filter(|r| r.table_id == table_id && pred(r));
        let first = it.next()?;
        it.next().is_none().then_some(first)
    }
}

/// Parses and verifies a dataset; `origin` names the source in errors.
pub fn parse_dataset(text: &str, origin: &str) -> Result<Dataset> {
    let fail = |reason: String| ClupError::Dataset {
        path: origin.to_string(),
        reason,
    };
    let ds: Dataset = serde_json::from_str(text).map_err(|e| fail(format!("malformed JSON: {e}")))?;
    if ds.rows.len() != ds.manifest.row_count {
        return Err(fail(format!(
            "manifest declares {} rows, file has {}",
            ds.manifest.row_count,
            ds.rows.len()
        )));
    }
    let sum = Dataset::rows_checksum(&ds.rows);
    if sum != ds.manifest.sha256 {
        return Err(fail(format!(
            "checksum mismatch: manifest {}, computed {sum}",
            ds.manifest.sha256
        )));
    }
    for (i, row) in ds.rows.iter().enumerate() {
        row.check()
            .map_err(|e| fail(format!("row {i} (table {} {}): {e}", row.table_id, row.label)))?;
    }
    Ok(ds)
}

pub fn load_bundled_dataset() -> Result<Dataset> {
    parse_dataset(BUNDLED, BUNDLED_NAME)
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let text = std::fs::read_to_string(path).map_err(|source| ClupError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_dataset(&text, &path.display().to_string())
}
