//! DDP and FDDP solvers.
//!
//! Both share the gap-aware Riccati backward pass. They differ only in the
//! forward pass: DDP rolls the dynamics out from `x̃₀`, FDDP keeps a fraction
//! `1 − α` of every gap open.

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use nalgebra::{DMatrix, DVector};
use rayon::ThreadPool;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::problem::{ProblemData, ProblemError, ShootingProblem};

pub const GOLDSTEIN_B1: f64 = 0.1;
pub const GOLDSTEIN_B2: f64 = 2.0;
pub const REGULARIZATION_MIN: f64 = 1e-9;
pub const REGULARIZATION_MAX: f64 = 1e9;
pub const REGULARIZATION_FACTOR: f64 = 10.0;
/// The smallest trial step is `2^-MIN_STEP_EXPONENT`.
pub const MIN_STEP_EXPONENT: i32 = 10;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error("Q_uu + μI is not positive definite at node {node}")]
    NotPositiveDefinite { node: usize },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("non-finite cost in the forward pass")]
    NonFinite,
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Ddp,
    Fddp,
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SolverKind::Ddp => "ddp",
            SolverKind::Fddp => "fddp",
        })
    }
}

impl FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "ddp" => Ok(SolverKind::Ddp),
            "fddp" => Ok(SolverKind::Fddp),
            other => Err(format!("unknown solver `{other}`, expected ddp or fddp")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub kind: SolverKind,
    pub max_iters: usize,
    pub tolerance: f64,
    /// Workers used for the derivative computation.
    pub threads: usize,
    pub initial_regularization: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            kind: SolverKind::Fddp,
            max_iters: 100,
            tolerance: 1e-9,
            threads: 1,
            initial_regularization: REGULARIZATION_MIN,
        }
    }
}

/// Goldstein-type acceptance: with `ΔJ ≤ 0` the cost must drop by at least
/// `b1·|ΔJ|`, otherwise it may rise by at most `b2·ΔJ`.
pub fn goldstein_accept(cost_new: f64, cost_old: f64, expected: f64) -> bool {
    let change = cost_new - cost_old;
    if expected <= 0.0 {
        change <= GOLDSTEIN_B1 * expected
    } else {
        change <= GOLDSTEIN_B2 * expected
    }
}

/// `1, ½, ¼, …, 2^-MIN_STEP_EXPONENT`.
pub fn step_lengths() -> impl Iterator<Item = f64> {
    (0..=MIN_STEP_EXPONENT).map(|i| 0.5f64.powi(i))
}

/// Per-node quantities of the backward pass. `vx` and `vxx` have `N + 1`
/// entries, the others `N`.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub qx: Vec<DVector<f64>>,
    pub qu: Vec<DVector<f64>>,
    pub qxx: Vec<DMatrix<f64>>,
    pub qxu: Vec<DMatrix<f64>>,
    pub quu: Vec<DMatrix<f64>>,
    pub k: Vec<DVector<f64>>,
    pub big_k: Vec<DMatrix<f64>>,
    pub vx: Vec<DVector<f64>>,
    pub vxx: Vec<DMatrix<f64>>,
    pub regularization: f64,
}

/// A trial iterate produced by a forward pass.
#[derive(Debug, Clone)]
pub struct Trial {
    pub xs: Vec<DVector<f64>>,
    pub us: Vec<DVector<f64>>,
    pub cost: f64,
    pub gaps: Vec<DVector<f64>>,
    pub step_length: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub gap_l2: f64,
    pub step_length: f64,
    pub regularization: f64,
    pub expected_dj: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Converged,
    MaxIters,
    Failure(String),
}

#[derive(Debug, Clone, Default)]
pub struct SolveReport {
    /// Row 0 is the initial iterate; row `i` the iterate after iteration `i`.
    pub records: Vec<IterationRecord>,
    pub termination: Option<Termination>,
    /// Derivative computation time per iteration.
    pub derivative_times: Vec<Duration>,
    /// Backward plus forward pass time per iteration.
    pub pass_times: Vec<Duration>,
    pub wall_time: Duration,
}

impl SolveReport {
    pub fn iterations(&self) -> usize {
        self.records.len().saturating_sub(1)
    }

    pub fn converged(&self) -> bool {
        self.termination == Some(Termination::Converged)
    }
}

#[cfg(not(target_arch = "wasm32"))]
mod clock {
    use std::time::{Duration, Instant};

    #[derive(Clone, Copy)]
    pub struct Stopwatch(Instant);

    impl Stopwatch {
        pub fn start() -> Self {
            Stopwatch(Instant::now())
        }

        pub fn elapsed(&self) -> Duration {
            self.0.elapsed()
        }
    }
}

#[cfg(target_arch = "wasm32")]
mod clock {
    use std::time::Duration;

    #[derive(Clone, Copy)]
    pub struct Stopwatch;

    impl Stopwatch {
        pub fn start() -> Self {
            Stopwatch
        }

        pub fn elapsed(&self) -> Duration {
            Duration::ZERO
        }
    }
}

use clock::Stopwatch;

/// Solver state: the current iterate, its derivatives and the last backward
/// pass. The step-wise methods expose the individual phases of an iteration.
#[derive(Debug)]
pub struct Solver {
    problem: ShootingProblem,
    kind: SolverKind,
    xs: Vec<DVector<f64>>,
    us: Vec<DVector<f64>>,
    cost: f64,
    gaps: Vec<DVector<f64>>,
    data: ProblemData,
    trial_data: ProblemData,
    derivatives_fresh: bool,
    workspace: Option<Workspace>,
    pool: Option<ThreadPool>,
}

impl Solver {
    /// DDP always starts from the rollout of `us`; FDDP uses `xs` when given.
    pub fn new(
        problem: ShootingProblem,
        kind: SolverKind,
        xs: Option<Vec<DVector<f64>>>,
        us: Vec<DVector<f64>>,
    ) -> Result<Self, SolverError> {
        let xs = match (kind, xs) {
            (SolverKind::Fddp, Some(xs)) => xs,
            _ => problem.rollout(&us)?,
        };
        let mut data = problem.create_data();
        let cost = problem.calc(&mut data, &xs, &us)?;
        let gaps = problem.gaps(&data, &xs)?;
        let trial_data = problem.create_data();
        Ok(Solver {
            problem,
            kind,
            xs,
            us,
            cost,
            gaps,
            data,
            trial_data,
            derivatives_fresh: false,
            workspace: None,
            pool: None,
        })
    }

    pub fn set_threads(&mut self, threads: usize) -> Result<(), SolverError> {
        self.pool = if threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| SolverError::Invalid(e.to_string()))?;
            Some(pool)
        } else {
            None
        };
        Ok(())
    }

    pub fn problem(&self) -> &ShootingProblem {
        &self.problem
    }

    pub fn kind(&self) -> SolverKind {
        self.kind
    }

    pub fn xs(&self) -> &[DVector<f64>] {
        &self.xs
    }

    pub fn us(&self) -> &[DVector<f64>] {
        &self.us
    }

    pub fn cost(&self) -> f64 {
        self.cost
    }

    pub fn gaps(&self) -> &[DVector<f64>] {
        &self.gaps
    }

    pub fn gap_norm(&self) -> f64 {
        ShootingProblem::l2_norm(&self.gaps)
    }

    pub fn data(&self) -> &ProblemData {
        &self.data
    }

    pub fn workspace(&self) -> Option<&Workspace> {
        self.workspace.as_ref()
    }

    pub fn into_solution(self) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        (self.xs, self.us)
    }

    /// Derivatives at the current iterate; a no-op when already up to date.
    pub fn compute_derivatives(&mut self) -> Result<(), SolverError> {
        if !self.derivatives_fresh {
            self.cost = self.problem.calc_diff(&mut self.data, &self.xs, &self.us, self.pool.as_ref())?;
            self.gaps = self.problem.gaps(&self.data, &self.xs)?;
            self.derivatives_fresh = true;
        }
        Ok(())
    }

    /// Riccati recursion with the value gradient deflected across each gap.
    pub fn backward_pass(&mut self, regularization: f64) -> Result<&Workspace, SolverError> {
        self.compute_derivatives()?;
        self.workspace = None;
        let n = self.problem.horizon();
        let nodes = &self.data.nodes;
        let mut ws = Workspace {
            qx: Vec::with_capacity(n),
            qu: Vec::with_capacity(n),
            qxx: Vec::with_capacity(n),
            qxu: Vec::with_capacity(n),
            quu: Vec::with_capacity(n),
            k: Vec::with_capacity(n),
            big_k: Vec::with_capacity(n),
            vx: vec![DVector::zeros(0); n + 1],
            vxx: vec![DMatrix::zeros(0, 0); n + 1],
            regularization,
        };
        ws.vx[n] = nodes[n].lx.clone();
        ws.vxx[n] = symmetrize(&nodes[n].lxx);
        let mut rev = Vec::with_capacity(n);
        for k in (0..n).rev() {
            let d = &nodes[k];
            let vxx_next = &ws.vxx[k + 1];
            let vx_next = &ws.vx[k + 1] + vxx_next * &self.gaps[k + 1];
            let qx = &d.lx + d.fx.tr_mul(&vx_next);
            let qu = &d.lu + d.fu.tr_mul(&vx_next);
            let vxx_fx = vxx_next * &d.fx;
            let vxx_fu = vxx_next * &d.fu;
            let qxx = &d.lxx + d.fx.tr_mul(&vxx_fx);
            let qxu = &d.lxu + d.fx.tr_mul(&vxx_fu);
            let quu = &d.luu + d.fu.tr_mul(&vxx_fu);
            let nu = quu.nrows();
            let (ff, fb) = if nu == 0 {
                (DVector::zeros(0), DMatrix::zeros(0, qx.len()))
            } else {
                let reg = &quu + DMatrix::identity(nu, nu) * regularization;
                let chol = reg.cholesky().ok_or(SolverError::NotPositiveDefinite { node: k })?;
                (-chol.solve(&qu), -chol.solve(&qxu.transpose()))
            };
            ws.vx[k] = &qx + fb.tr_mul(&qu);
            ws.vxx[k] = symmetrize(&(&qxx + &qxu * &fb));
            rev.push((qx, qu, qxx, qxu, quu, ff, fb));
        }
        for (qx, qu, qxx, qxu, quu, ff, fb) in rev.into_iter().rev() {
            ws.qx.push(qx);
            ws.qu.push(qu);
            ws.qxx.push(qxx);
            ws.qxu.push(qxu);
            ws.quu.push(quu);
            ws.k.push(ff);
            ws.big_k.push(fb);
        }
        self.workspace = Some(ws);
        Ok(self.workspace.as_ref().expect("just set"))
    }

    fn require_workspace(&self) -> Result<&Workspace, SolverError> {
        self.workspace.as_ref().ok_or_else(|| SolverError::Invalid("no successful backward pass".into()))
    }

    /// Coefficients `(Δ₁, Δ₂)` of the predicted cost change
    /// `ΔJ(α) = Δ₁·α + ½·Δ₂·α²` along the search path.
    ///
    /// The gap terms are evaluated at `δxₖ`, the full-step deviation of the
    /// linearized rollout, which makes the model exact on linear-quadratic
    /// problems.
    pub fn expected_improvement(&self) -> Result<(f64, f64), SolverError> {
        let ws = self.require_workspace()?;
        let n = self.problem.horizon();
        let gaps = &self.gaps;
        let mut d1 = 0.0;
        let mut d2 = 0.0;
        let mut dx = gaps[0].clone();
        for k in 0..=n {
            let vxx_gap = &ws.vxx[k] * &gaps[k];
            let vxx_dx = &ws.vxx[k] * &dx;
            d1 += gaps[k].dot(&(&ws.vx[k] - &vxx_dx + &vxx_gap));
            d2 += gaps[k].dot(&(vxx_dx * 2.0 - vxx_gap));
            if k == n {
                break;
            }
            d1 += ws.k[k].dot(&ws.qu[k]);
            d2 += ws.k[k].dot(&(&ws.quu[k] * &ws.k[k]));
            let du = &ws.k[k] + &ws.big_k[k] * &dx;
            let node = &self.data.nodes[k];
            dx = &node.fx * &dx + &node.fu * du + &gaps[k + 1];
        }
        Ok((d1, d2))
    }

    /// Nonlinear rollout along the last backward pass with step length `α`.
    pub fn forward_pass(&mut self, alpha: f64) -> Result<Trial, SolverError> {
        let ws = self.workspace.as_ref().ok_or_else(|| SolverError::Invalid("no successful backward pass".into()))?;
        let problem = &self.problem;
        let space = problem.state();
        let n = problem.horizon();
        let fddp = self.kind == SolverKind::Fddp;
        // x ⊕ (−(1 − α)·f̄), skipped when the displacement vanishes
        let reopen = |x: &DVector<f64>, gap: &DVector<f64>| -> Result<DVector<f64>, SolverError> {
            let shift = gap * -(1.0 - alpha);
            if !fddp || shift.iter().all(|&v| v == 0.0) {
                return Ok(x.clone());
            }
            space.integrate(x, &shift).map_err(|e| SolverError::Invalid(e.to_string()))
        };
        let invalid = |e: crate::manifold::ManifoldError| SolverError::Invalid(e.to_string());
        let mut xs = Vec::with_capacity(n + 1);
        let mut us = Vec::with_capacity(n);
        xs.push(reopen(problem.x0(), &self.gaps[0])?);
        let mut cost = 0.0;
        for k in 0..n {
            let dx = space.difference(&self.xs[k], &xs[k]).map_err(invalid)?;
            let u = &self.us[k] + &ws.k[k] * alpha + &ws.big_k[k] * dx;
            let d = &mut self.trial_data.nodes[k];
            problem
                .model(k)
                .calc(d, &xs[k], &u)
                .map_err(|source| ProblemError::Node { node: k, source })?;
            cost += d.cost;
            let next = reopen(&d.xnext, &self.gaps[k + 1])?;
            xs.push(next);
            us.push(u);
        }
        let d = &mut self.trial_data.nodes[n];
        problem
            .model(n)
            .calc(d, &xs[n], &DVector::zeros(0))
            .map_err(|source| ProblemError::Node { node: n, source })?;
        cost += d.cost;
        if !cost.is_finite() {
            return Err(SolverError::NonFinite);
        }
        let gaps = problem.gaps(&self.trial_data, &xs)?;
        Ok(Trial { xs, us, cost, gaps, step_length: alpha })
    }

    /// Makes `trial` the current iterate.
    pub fn accept(&mut self, trial: Trial) {
        self.xs = trial.xs;
        self.us = trial.us;
        self.cost = trial.cost;
        self.gaps = trial.gaps;
        self.derivatives_fresh = false;
        self.workspace = None;
    }

    /// Runs the full solver loop from the current iterate.
    pub fn solve(&mut self, options: &SolverOptions) -> SolveReport {
        self.solve_with(options, |_, _| {})
    }

    /// Like [`Solver::solve`], calling `observer` with the solver and the new
    /// trace row after every iteration.
    pub fn solve_with<F>(&mut self, options: &SolverOptions, mut observer: F) -> SolveReport
    where
        F: FnMut(&Solver, &IterationRecord),
    {
        let clock = Stopwatch::start();
        let mut report = SolveReport::default();
        let mut mu = options.initial_regularization.max(0.0);
        report.records.push(IterationRecord {
            iteration: 0,
            cost: self.cost,
            gap_l2: self.gap_norm(),
            step_length: 0.0,
            regularization: mu,
            expected_dj: 0.0,
            accepted: false,
        });
        let termination = self.iterate(options, &mut mu, &mut report, &mut observer);
        report.termination = Some(termination);
        report.wall_time = clock.elapsed();
        report
    }

    fn iterate(
        &mut self,
        options: &SolverOptions,
        mu: &mut f64,
        report: &mut SolveReport,
        observer: &mut dyn FnMut(&Solver, &IterationRecord),
    ) -> Termination {
        if let Err(e) = self.set_threads(options.threads) {
            return Termination::Failure(e.to_string());
        }
        if options.max_iters == 0 {
            return Termination::MaxIters;
        }
        let raise = |mu: f64| (mu * REGULARIZATION_FACTOR).max(REGULARIZATION_MIN);
        let mut iteration = 0;
        loop {
            let watch = Stopwatch::start();
            if let Err(e) = self.compute_derivatives() {
                return Termination::Failure(e.to_string());
            }
            let derivative_time = watch.elapsed();
            let watch = Stopwatch::start();
            loop {
                match self.backward_pass(*mu) {
                    Ok(_) => break,
                    Err(SolverError::NotPositiveDefinite { node }) => {
                        *mu = raise(*mu);
                        if *mu > REGULARIZATION_MAX {
                            return Termination::Failure(format!(
                                "regularization exceeded {REGULARIZATION_MAX:e} (Q_uu indefinite at node {node})"
                            ));
                        }
                    }
                    Err(e) => return Termination::Failure(e.to_string()),
                }
            }
            let (d1, d2) = match self.expected_improvement() {
                Ok(d) => d,
                Err(e) => return Termination::Failure(e.to_string()),
            };
            if d1.abs() + self.gap_norm() < options.tolerance {
                return Termination::Converged;
            }
            if iteration == options.max_iters {
                return Termination::MaxIters;
            }
            iteration += 1;

            let mut accepted = None;
            let mut last = (0.0, 0.0);
            for alpha in step_lengths() {
                let expected = d1 * alpha + 0.5 * d2 * alpha * alpha;
                last = (alpha, expected);
                match self.forward_pass(alpha) {
                    Ok(trial) if goldstein_accept(trial.cost, self.cost, expected) => {
                        accepted = Some(trial);
                        break;
                    }
                    _ => {}
                }
            }
            let used = *mu;
            let ok = accepted.is_some();
            if let Some(trial) = accepted {
                self.accept(trial);
                *mu = (*mu / REGULARIZATION_FACTOR).max(REGULARIZATION_MIN);
            } else {
                *mu = raise(*mu);
            }
            report.derivative_times.push(derivative_time);
            report.pass_times.push(watch.elapsed());
            let record = IterationRecord {
                iteration,
                cost: self.cost,
                gap_l2: self.gap_norm(),
                step_length: last.0,
                regularization: used,
                expected_dj: last.1,
                accepted: ok,
            };
            report.records.push(record);
            observer(self, &record);
            if *mu > REGULARIZATION_MAX {
                return Termination::Failure(format!("line search failed with regularization above {REGULARIZATION_MAX:e}"));
            }
        }
    }
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Solves `problem` from the given guess and returns the final iterate.
pub fn solve(
    problem: ShootingProblem,
    xs: Option<Vec<DVector<f64>>>,
    us: Vec<DVector<f64>>,
    options: &SolverOptions,
) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>, SolveReport), SolverError> {
    let mut solver = Solver::new(problem, options.kind, xs, us)?;
    let report = solver.solve(options);
    let (xs, us) = solver.into_solution();
    Ok((xs, us, report))
}
