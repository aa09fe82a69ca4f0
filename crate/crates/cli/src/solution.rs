//! `solution.csv` and `trace.csv`.

use std::path::Path;

use fddp_core::solver::IterationRecord;
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Format(String),
}

pub const TRACE_COLUMNS: [&str; 7] =
    ["iteration", "cost", "gap_l2", "step_length", "regularization", "expected_dj", "accepted"];

/// One trace row; the last two columns are cost and gap divided by their
/// iteration-0 values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub cost: f64,
    pub gap_l2: f64,
    pub step_length: f64,
    pub regularization: f64,
    pub expected_dj: f64,
    pub accepted: bool,
    pub cost_normalized: f64,
    pub gap_normalized: f64,
}

pub fn trace_rows(records: &[IterationRecord]) -> Vec<TraceRow> {
    let (c0, g0) = records.first().map(|r| (r.cost, r.gap_l2)).unwrap_or((0.0, 0.0));
    let ratio = |v: f64, base: f64| if base == 0.0 { 0.0 } else { v / base };
    records
        .iter()
        .map(|r| TraceRow {
            iteration: r.iteration,
            cost: r.cost,
            gap_l2: r.gap_l2,
            step_length: r.step_length,
            regularization: r.regularization,
            expected_dj: r.expected_dj,
            accepted: r.accepted,
            cost_normalized: ratio(r.cost, c0),
            gap_normalized: ratio(r.gap_l2, g0),
        })
        .collect()
}

pub fn write_trace(path: &Path, records: &[IterationRecord]) -> Result<(), CsvError> {
    let mut w = csv::Writer::from_path(path)?;
    for row in trace_rows(records) {
        w.serialize(row)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>, CsvError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.len() < TRACE_COLUMNS.len() || header.iter().zip(TRACE_COLUMNS).any(|(h, c)| h != c) {
        return Err(CsvError::Format(format!("unexpected trace header {header:?}")));
    }
    Ok(r.deserialize().collect::<Result<_, _>>()?)
}

/// Rows `node,x_0..x_{nx-1},u_0..u_{m-1}` with `m` the widest control; nodes
/// with fewer controls leave the trailing cells empty and the terminal node
/// has no controls at all.
pub fn write_solution(path: &Path, xs: &[DVector<f64>], us: &[DVector<f64>]) -> Result<(), CsvError> {
    let nx = xs.first().map_or(0, |x| x.len());
    let nu = us.iter().map(|u| u.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_path(path)?;
    let header = std::iter::once("node".to_string())
        .chain((0..nx).map(|i| format!("x_{i}")))
        .chain((0..nu).map(|i| format!("u_{i}")));
    w.write_record(header)?;
    for (k, x) in xs.iter().enumerate() {
        let u = us.get(k);
        let record = std::iter::once(k.to_string())
            .chain(x.iter().map(|v| v.to_string()))
            .chain((0..nu).map(|i| u.and_then(|u| u.get(i)).map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(record)?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

/// Inverse of [`write_solution`]; empty control cells mark absent entries.
pub fn read_solution(path: &Path) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>), CsvError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let nx = header.iter().filter(|h| h.starts_with("x_")).count();
    let mut xs = Vec::new();
    let mut us = Vec::new();
    for (row, record) in r.records().enumerate() {
        let record = record?;
        let parse = |s: &str| {
            s.trim().parse::<f64>().map_err(|e| CsvError::Format(format!("row {row}: `{s}`: {e}")))
        };
        let x = record.iter().skip(1).take(nx).map(parse).collect::<Result<Vec<_>, _>>()?;
        let u = record.iter().skip(1 + nx).filter(|c| !c.trim().is_empty()).map(parse).collect::<Result<Vec<_>, _>>()?;
        xs.push(DVector::from_vec(x));
        us.push(DVector::from_vec(u));
    }
    if xs.is_empty() {
        return Err(CsvError::Format("solution has no rows".into()));
    }
    us.pop();
    Ok((xs, us))
}
