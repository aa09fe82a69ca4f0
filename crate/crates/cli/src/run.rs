//! `solve`: one solver run with trace, solution and summary output.

use std::path::Path;

use fddp_core::solver::{SolveReport, Solver, SolverError, SolverOptions, Termination};
use nalgebra::DVector;
use serde::Serialize;

use crate::scenario::{Scenario, ScenarioError};
use crate::solution::{write_solution, write_trace};
use crate::ExitStatus;

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("solver setup failed: {0}")]
    Solver(#[from] SolverError),
    #[error("cannot write {path}: {message}")]
    Io { path: String, message: String },
}

impl RunError {
    pub fn exit_status(&self) -> ExitStatus {
        match self {
            RunError::Scenario(_) => ExitStatus::Config,
            RunError::Solver(_) => ExitStatus::Failure,
            RunError::Io { .. } => ExitStatus::Io,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub xs: Vec<DVector<f64>>,
    pub us: Vec<DVector<f64>>,
    pub report: SolveReport,
}

impl Outcome {
    pub fn exit_status(&self) -> ExitStatus {
        match self.report.termination {
            Some(Termination::Converged) => ExitStatus::Converged,
            Some(Termination::MaxIters) => ExitStatus::MaxIters,
            _ => ExitStatus::Failure,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Summary<'a> {
    pub scenario: &'a str,
    pub solver: String,
    pub termination: Option<&'a Termination>,
    pub iterations: usize,
    pub cost: f64,
    pub gap_l2: f64,
    pub wall_time_s: f64,
}

/// Solves the scenario from its warm start with `options`.
pub fn solve_scenario(scenario: &Scenario, options: &SolverOptions) -> Result<Outcome, RunError> {
    let built = scenario.build()?;
    let mut solver = Solver::new(built.problem, options.kind, Some(built.xs), built.us)?;
    let report = solver.solve(options);
    let (xs, us) = solver.into_solution();
    Ok(Outcome { xs, us, report })
}

/// Solves and writes `trace.csv`, `solution.csv` and `summary.json` to `out_dir`.
pub fn run(scenario: &Scenario, options: &SolverOptions, out_dir: &Path) -> Result<Outcome, RunError> {
    let io = |path: &Path, e: &dyn std::fmt::Display| RunError::Io { path: path.display().to_string(), message: e.to_string() };
    std::fs::create_dir_all(out_dir).map_err(|e| io(out_dir, &e))?;
    let outcome = solve_scenario(scenario, options)?;

    let path = out_dir.join("trace.csv");
    write_trace(&path, &outcome.report.records).map_err(|e| io(&path, &e))?;
    let path = out_dir.join("solution.csv");
    write_solution(&path, &outcome.xs, &outcome.us).map_err(|e| io(&path, &e))?;

    let last = outcome.report.records.last();
    let summary = Summary {
        scenario: &scenario.name,
        solver: options.kind.to_string(),
        termination: outcome.report.termination.as_ref(),
        iterations: outcome.report.iterations(),
        cost: last.map_or(f64::NAN, |r| r.cost),
        gap_l2: last.map_or(f64::NAN, |r| r.gap_l2),
        wall_time_s: outcome.report.wall_time.as_secs_f64(),
    };
    let path = out_dir.join("summary.json");
    let text = serde_json::to_string_pretty(&summary).map_err(|e| io(&path, &e))?;
    std::fs::write(&path, text + "\n").map_err(|e| io(&path, &e))?;
    Ok(outcome)
}
