//! Per-iteration timing over worker counts.

use std::fmt;

use fddp_core::solver::{Solver, SolverOptions};
use serde::Serialize;

use crate::run::RunError;
use crate::scenario::Scenario;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub threads: usize,
    pub trials: usize,
    pub iterations: usize,
    pub iter_median_s: f64,
    pub iter_p95_s: f64,
    pub deriv_median_s: f64,
    pub deriv_p95_s: f64,
    pub pass_median_s: f64,
    pub pass_p95_s: f64,
}

/// Nearest-rank percentile of an unsorted sample.
pub fn percentile(samples: &[f64], p: f64) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * s.len() as f64).ceil() as usize;
    s[rank.clamp(1, s.len()) - 1]
}

pub fn median(samples: &[f64]) -> f64 {
    if samples.is_empty() {
        return f64::NAN;
    }
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Runs `trials` solves per worker count. A trial's per-iteration time is its
/// wall time over its iteration count; the derivative and pass columns split
/// the same time by phase.
pub fn bench(scenario: &Scenario, options: &SolverOptions, threads: &[usize], trials: usize) -> Result<Vec<BenchRow>, RunError> {
    let built = scenario.build()?;
    let mut rows = Vec::with_capacity(threads.len());
    for &t in threads {
        let (mut total, mut deriv, mut pass) = (Vec::new(), Vec::new(), Vec::new());
        let mut iterations = 0;
        for _ in 0..trials.max(1) {
            let mut solver = Solver::new(built.problem.clone(), options.kind, Some(built.xs.clone()), built.us.clone())?;
            let report = solver.solve(&SolverOptions { threads: t, ..*options });
            iterations = report.iterations();
            let per = iterations.max(1) as f64;
            let sum = |d: &[std::time::Duration]| d.iter().map(|d| d.as_secs_f64()).sum::<f64>() / per;
            total.push(report.wall_time.as_secs_f64() / per);
            deriv.push(sum(&report.derivative_times));
            pass.push(sum(&report.pass_times));
        }
        rows.push(BenchRow {
            threads: t,
            trials: trials.max(1),
            iterations,
            iter_median_s: median(&total),
            iter_p95_s: percentile(&total, 95.0),
            deriv_median_s: median(&deriv),
            deriv_p95_s: percentile(&deriv, 95.0),
            pass_median_s: median(&pass),
            pass_p95_s: percentile(&pass, 95.0),
        });
    }
    Ok(rows)
}

/// The table as CSV.
pub struct Table<'a>(pub &'a [BenchRow]);

impl fmt::Display for Table<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "threads,trials,iterations,iter_median_s,iter_p95_s,deriv_median_s,deriv_p95_s,pass_median_s,pass_p95_s")?;
        for r in self.0 {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{}",
                r.threads, r.trials, r.iterations, r.iter_median_s, r.iter_p95_s, r.deriv_median_s, r.deriv_p95_s, r.pass_median_s, r.pass_p95_s
            )?;
        }
        Ok(())
    }
}
