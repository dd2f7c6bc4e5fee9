//! Cross-seed aggregation of trace files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use dmtl_core::solvers::SolverKind;

use crate::error::{HarnessError, Result};
use crate::trace::{read_trace, trace_files, RoundTrace, RowKind, Status, TraceFile, HASH_PREFIX};

const FIXED_COLUMNS: [&str; 9] = [
    "solver",
    "row",
    "round",
    "seeds",
    "mean_excess_risk",
    "std_excess_risk",
    "mean_train_loss",
    "std_train_loss",
    "mean_vectors_per_worker",
];

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub solver: SolverKind,
    /// `round` for a per-round cell, `final` for the end-of-run summary.
    pub final_row: bool,
    pub round: u64,
    pub seeds: usize,
    pub excess_risk: Option<(f64, f64)>,
    pub train_loss: (f64, f64),
    pub mean_vectors_per_worker: f64,
    /// On `final` rows: first round where the mean excess risk is ≤ ε, per ε.
    pub rounds_to_eps: Vec<Option<u64>>,
}

/// Per solver, mean and spread across seeds at every recorded round, plus one
/// `final` row from the summary rows.
///
/// A seed whose run stopped early (converged, or a one-shot) keeps its last
/// value at later rounds; a diverged seed contributes only the rounds it has.
pub fn summarize(traces: &[TraceFile], epsilons: &[f64]) -> Result<Vec<AggregateRow>> {
    if traces.is_empty() {
        return Err(HarnessError::config("no traces to summarize"));
    }
    let mut by_solver: BTreeMap<SolverKind, BTreeMap<u64, Vec<&RoundTrace>>> = BTreeMap::new();
    for t in traces {
        for row in &t.rows {
            by_solver
                .entry(row.solver)
                .or_default()
                .entry(row.seed)
                .or_default()
                .push(row);
        }
    }

    let mut out = Vec::new();
    for (solver, seeds) in by_solver {
        let mut curves: Vec<(Vec<&RoundTrace>, bool)> = Vec::new();
        let mut finals: Vec<&RoundTrace> = Vec::new();
        for rows in seeds.values() {
            let mut curve: Vec<&RoundTrace> = rows
                .iter()
                .copied()
                .filter(|r| r.kind == RowKind::Round)
                .collect();
            curve.sort_by_key(|r| r.round);
            let summary = rows.iter().copied().find(|r| r.kind == RowKind::Summary);
            let diverged = summary.is_some_and(|s| s.status == Status::Diverged);
            if let Some(s) = summary {
                finals.push(s);
            }
            if !curve.is_empty() {
                curves.push((curve, diverged));
            }
        }

        let mut rounds: Vec<u64> = curves
            .iter()
            .flat_map(|(c, _)| c.iter().map(|r| r.round))
            .collect();
        rounds.sort_unstable();
        rounds.dedup();
        let mut per_round = Vec::with_capacity(rounds.len());
        for &t in &rounds {
            let cell: Vec<&RoundTrace> = curves
                .iter()
                .filter_map(|(c, diverged)| {
                    let last = c.last().expect("nonempty curve");
                    if *diverged && t > last.round {
                        return None;
                    }
                    c.iter().rev().find(|r| r.round <= t).copied()
                })
                .collect();
            if let Some(row) = aggregate(solver, false, t, &cell) {
                per_round.push(row);
            }
        }

        let eps_rounds: Vec<Option<u64>> = epsilons
            .iter()
            .map(|&eps| {
                let hit = |r: &AggregateRow| r.excess_risk.is_some_and(|(m, _)| m <= eps);
                per_round.iter().find(|r| hit(r)).map(|r| r.round)
            })
            .collect();
        let final_round = finals.iter().map(|r| r.round).max().unwrap_or(0);
        let final_row = aggregate(solver, true, final_round, &finals).map(|mut row| {
            row.rounds_to_eps = if per_round.is_empty() {
                // One-shot: the single value either meets ε or never will.
                epsilons
                    .iter()
                    .map(|&eps| {
                        row.excess_risk
                            .filter(|(m, _)| *m <= eps)
                            .map(|_| final_round)
                    })
                    .collect()
            } else {
                eps_rounds.clone()
            };
            row
        });
        out.extend(per_round);
        out.extend(final_row);
    }
    Ok(out)
}

fn aggregate(
    solver: SolverKind,
    final_row: bool,
    round: u64,
    cell: &[&RoundTrace],
) -> Option<AggregateRow> {
    if cell.is_empty() {
        return None;
    }
    let risks: Vec<f64> = cell.iter().filter_map(|r| r.excess_risk).collect();
    let losses: Vec<f64> = cell.iter().map(|r| r.train_loss).collect();
    let vectors = cell
        .iter()
        .map(|r| r.vectors_per_worker as f64)
        .sum::<f64>()
        / cell.len() as f64;
    Some(AggregateRow {
        solver,
        final_row,
        round,
        seeds: cell.len(),
        excess_risk: mean_std(&risks),
        train_loss: mean_std(&losses).expect("nonempty"),
        mean_vectors_per_worker: vectors,
        rounds_to_eps: Vec::new(),
    })
}

/// Header of the aggregate file for a given ε list.
pub fn aggregate_columns(epsilons: &[f64]) -> Vec<String> {
    let mut cols: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    cols.extend(epsilons.iter().map(|e| format!("rounds_to_eps_{e}")));
    cols
}

pub fn write_aggregate(
    path: &Path,
    rows: &[AggregateRow],
    epsilons: &[f64],
    spec_hash: Option<&str>,
) -> Result<()> {
    let mut buf = Vec::new();
    if let Some(h) = spec_hash {
        buf.extend_from_slice(format!("{HASH_PREFIX}{h}\n").as_bytes());
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(aggregate_columns(epsilons))?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in rows {
            let mut rec = vec![
                r.solver.to_string(),
                if r.final_row { "final" } else { "round" }.to_string(),
                r.round.to_string(),
                r.seeds.to_string(),
                opt(r.excess_risk.map(|x| x.0)),
                opt(r.excess_risk.map(|x| x.1)),
                r.train_loss.0.to_string(),
                r.train_loss.1.to_string(),
                r.mean_vectors_per_worker.to_string(),
            ];
            for k in 0..epsilons.len() {
                rec.push(
                    r.rounds_to_eps
                        .get(k)
                        .copied()
                        .flatten()
                        .map(|t| t.to_string())
                        .unwrap_or_default(),
                );
            }
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| HarnessError::file(path, e))?;
    }
    fs::write(path, buf).map_err(|e| HarnessError::file(path, e))
}

/// Reads every trace in `dir`, aggregates, and writes `out`.
pub fn summarize_dir(dir: &Path, out: &Path, epsilons: &[f64]) -> Result<Vec<AggregateRow>> {
    let files = trace_files(dir)?;
    let traces = files
        .iter()
        .map(|p| read_trace(p))
        .collect::<Result<Vec<_>>>()?;
    let rows = summarize(&traces, epsilons)?;
    let mut hashes: Vec<&str> = traces
        .iter()
        .filter_map(|t| t.spec_hash.as_deref())
        .collect();
    hashes.sort_unstable();
    hashes.dedup();
    let hash = if hashes.len() == 1 {
        Some(hashes[0])
    } else {
        None
    };
    write_aggregate(out, &rows, epsilons, hash)?;
    Ok(rows)
}
