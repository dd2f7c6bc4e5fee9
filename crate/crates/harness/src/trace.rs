//! Per-round trace rows and their CSV files.
//!
//! A trace file starts with `# spec_sha256=<hex>`, then a header and one row
//! per recorded round, ending with a `summary` row. Every solver writes the
//! same columns; metrics it does not have are left empty.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dmtl_core::solvers::SolverKind;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const HASH_PREFIX: &str = "# spec_sha256=";

pub const COLUMNS: [&str; 15] = [
    "solver",
    "seed",
    "kind",
    "round",
    "vectors_per_worker",
    "train_loss",
    "excess_risk",
    "rank",
    "wall_ms",
    "status",
    "objective",
    "primal_residual",
    "dual_residual",
    "orthonormality_defect",
    "params",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RowKind {
    Round,
    Summary,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    /// An intermediate round.
    Ok,
    /// The round budget ran out, or a one-shot procedure finished.
    Completed,
    /// The solver stopped early on its own criterion.
    Converged,
    /// The run was cut short by a non-finite or runaway iterate.
    Diverged,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundTrace {
    pub solver: SolverKind,
    pub seed: u64,
    pub kind: RowKind,
    /// Communication rounds completed.
    pub round: u64,
    /// Cumulative vectors sent or received by the busiest worker.
    pub vectors_per_worker: u64,
    /// `L_n(W)` on the training split.
    pub train_loss: f64,
    pub excess_risk: Option<f64>,
    pub rank: usize,
    pub wall_ms: Option<f64>,
    pub status: Status,
    /// `L_n(W) + λ‖W‖_*` for the penalized procedures.
    pub objective: Option<f64>,
    pub primal_residual: Option<f64>,
    pub dual_residual: Option<f64>,
    pub orthonormality_defect: Option<f64>,
    /// Selected hyperparameters, `name=value` joined by `;`.
    pub params: String,
}

/// `trace_<solver>_seed<seed>.csv`.
pub fn trace_file_name(solver: SolverKind, seed: u64) -> String {
    format!("trace_{solver}_seed{seed}.csv")
}

pub fn write_trace(path: &Path, spec_hash: &str, rows: &[RoundTrace]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "{HASH_PREFIX}{spec_hash}").expect("write to memory");
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        if rows.is_empty() {
            w.write_record(COLUMNS)?;
        }
        for row in rows {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| HarnessError::file(path, e))?;
    }
    fs::write(path, buf).map_err(|e| HarnessError::file(path, e))
}

#[derive(Clone, Debug)]
pub struct TraceFile {
    pub path: PathBuf,
    pub spec_hash: Option<String>,
    pub rows: Vec<RoundTrace>,
}

pub fn read_trace(path: &Path) -> Result<TraceFile> {
    let text = fs::read_to_string(path).map_err(|e| HarnessError::file(path, e))?;
    let spec_hash = text
        .lines()
        .next()
        .and_then(|l| l.strip_prefix(HASH_PREFIX))
        .map(|h| h.trim().to_string());
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    let found: Vec<&str> = header.iter().collect();
    if found != COLUMNS {
        return Err(HarnessError::Schema {
            path: path.to_path_buf(),
            reason: format!("columns {found:?}, expected {COLUMNS:?}"),
        });
    }
    let mut rows = Vec::new();
    for rec in reader.deserialize() {
        let row: RoundTrace = rec.map_err(|e| HarnessError::Schema {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok(TraceFile {
        path: path.to_path_buf(),
        spec_hash,
        rows,
    })
}

/// All `trace_*.csv` files in `dir`, sorted by name.
pub fn trace_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| HarnessError::file(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| HarnessError::file(dir, e))?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("trace_") && name.ends_with(".csv") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}
