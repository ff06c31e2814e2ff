//! CSV and JSON artifacts. Floats are written with 17 significant digits so
//! that parsing a file reproduces the values exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use freehorizon::cost::CostSpec;
use freehorizon::dynamics::Trajectory;
use freehorizon::horizon::{MSweepResult, SweepRecord};
use serde::Serialize;

use crate::error::CliError;

pub const SWEEP_HEADER: [&str; 7] = [
    "T",
    "total_cost",
    "transfer_cost",
    "terminal_phi",
    "hit",
    "converged",
    "iterations",
];

pub fn float(v: f64) -> String {
    format!("{v:.16e}")
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(file))
}

fn csv_error(path: &Path, err: csv::Error) -> CliError {
    let source = match err.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => std::io::Error::other(format!("{other:?}")),
    };
    CliError::io(path, source)
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

/// One row per record, in increasing `T`.
pub fn write_sweep_csv(records: &[SweepRecord], path: &Path) -> Result<(), CliError> {
    if records.is_empty() {
        return Err(CliError::Argument("no sweep records to write".into()));
    }
    let mut sorted: Vec<&SweepRecord> = records.iter().collect();
    sorted.sort_by_key(|r| r.horizon);
    let rows: Vec<Vec<String>> = sorted
        .iter()
        .map(|r| {
            vec![
                r.horizon.to_string(),
                float(r.total_cost),
                float(r.transfer_cost),
                float(r.terminal_phi),
                r.hit.to_string(),
                r.converged.to_string(),
                r.iterations.to_string(),
            ]
        })
        .collect();
    write_rows(path, &strings(&SWEEP_HEADER), &rows)
}

/// Inverse of [`write_sweep_csv`].
pub fn read_sweep_csv(path: &Path) -> Result<Vec<SweepRecord>, CliError> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let bad = |what: &str| {
        CliError::io(
            path,
            std::io::Error::new(std::io::ErrorKind::InvalidData, what.to_string()),
        )
    };
    let mut records = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| csv_error(path, e))?;
        if row.len() != SWEEP_HEADER.len() {
            return Err(bad("wrong number of fields"));
        }
        let f = |i: usize| row[i].parse::<f64>().map_err(|_| bad(&row[i]));
        let b = |i: usize| row[i].parse::<bool>().map_err(|_| bad(&row[i]));
        let n = |i: usize| row[i].parse::<usize>().map_err(|_| bad(&row[i]));
        records.push(SweepRecord {
            horizon: n(0)?,
            total_cost: f(1)?,
            transfer_cost: f(2)?,
            terminal_phi: f(3)?,
            hit: b(4)?,
            converged: b(5)?,
            iterations: n(6)?,
        });
    }
    Ok(records)
}

pub fn write_msweep_csv(result: &MSweepResult, path: &Path) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = result
        .rows
        .iter()
        .map(|r| {
            vec![
                float(r.level),
                r.t_star.to_string(),
                float(r.j_m),
                float(result.j_ref),
                float(r.gap),
            ]
        })
        .collect();
    write_rows(
        path,
        &strings(&["M", "T_star", "J_M", "J_ref", "gap"]),
        &rows,
    )
}

pub fn write_discounted_csv(
    beta: f64,
    entered: bool,
    t_star: Option<usize>,
    j_m: Option<f64>,
    path: &Path,
) -> Result<(), CliError> {
    let row = vec![
        float(beta),
        entered.to_string(),
        t_star.map(|t| t.to_string()).unwrap_or_default(),
        j_m.map(float).unwrap_or_default(),
    ];
    write_rows(
        path,
        &strings(&["beta", "entered", "T_star", "J_M"]),
        &[row],
    )
}

/// States, controls and undiscounted stage cost per step; the final row holds
/// the terminal state with empty control and cost fields.
pub fn write_trajectory_csv(
    trajectory: &Trajectory,
    cost: &CostSpec,
    path: &Path,
) -> Result<(), CliError> {
    let n = trajectory.states[0].len();
    let p = cost.control_dim();
    let mut header = vec!["k".to_string()];
    header.extend((0..n).map(|i| format!("x_{i}")));
    header.extend((0..p).map(|i| format!("u_{i}")));
    header.push("stage_cost".into());
    let rows: Vec<Vec<String>> = trajectory
        .states
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let mut row = vec![k.to_string()];
            row.extend(x.iter().map(|&v| float(v)));
            match trajectory.controls.get(k) {
                Some(u) => {
                    row.extend(u.iter().map(|&v| float(v)));
                    row.push(float(cost.stage_cost(x, u)));
                }
                None => row.extend(std::iter::repeat_n(String::new(), p + 1)),
            }
            row
        })
        .collect();
    write_rows(path, &header, &rows)
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)
        .map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
    w.write_all(b"\n")
        .and_then(|_| w.flush())
        .map_err(|e| CliError::io(path, e))
}

/// One JSON object per line.
pub fn write_jsonl<T: Serialize>(values: &[T], path: &Path) -> Result<(), CliError> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in values {
        serde_json::to_writer(&mut w, v)
            .map_err(|e| CliError::io(path, std::io::Error::other(e)))?;
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
