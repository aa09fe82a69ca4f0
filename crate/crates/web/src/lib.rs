//! Browser demo: pendulum swing-up with both solvers, gap contraction on the
//! monoped hop, and a single impact with adjustable restitution.

use std::path::Path;

use fddp_bench::scenario::{parse_scenario, Scenario, WarmStart};
use fddp_core::contact::impulse_dynamics;
use fddp_core::solver::{IterationRecord, Solver, SolverKind, SolverOptions};
use nalgebra::DVector;
use serde::Serialize;
use wasm_bindgen::prelude::*;

const PENDULUM: &str = include_str!("../../cli/scenarios/pendulum_swingup.json");
const HOP: &str = include_str!("../../cli/scenarios/monoped_hop_warmstart_infeasible.json");

fn scenario(text: &str, label: &str) -> Result<Scenario, String> {
    let s = parse_scenario(text, Path::new(label)).map_err(|e| e.to_string())?;
    s.validate().map_err(|e| e.to_string())?;
    Ok(s)
}

#[derive(Debug, Serialize)]
pub struct Trace {
    pub cost: Vec<f64>,
    pub gap: Vec<f64>,
    pub step: Vec<f64>,
    pub accepted: Vec<bool>,
    pub termination: String,
    /// Pendulum angle per node of the final iterate.
    pub angle: Vec<f64>,
}

impl Trace {
    fn new(records: &[IterationRecord], termination: String, xs: &[DVector<f64>]) -> Self {
        Trace {
            cost: records.iter().map(|r| r.cost).collect(),
            gap: records.iter().map(|r| r.gap_l2).collect(),
            step: records.iter().map(|r| r.step_length).collect(),
            accepted: records.iter().map(|r| r.accepted).collect(),
            termination,
            angle: xs.iter().map(|x| x[0]).collect(),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Comparison {
    pub fddp: Trace,
    pub ddp: Trace,
    /// Angles of the interpolated warm start FDDP begins from.
    pub warm_start: Vec<f64>,
}

/// Swing-up with `horizon` nodes of `dt`. FDDP starts from states
/// interpolated between hanging and upright, DDP from the rollout of the
/// same controls.
pub fn compare_pendulum(horizon: usize, dt: f64, max_iters: usize) -> Result<Comparison, String> {
    let mut s = scenario(PENDULUM, "pendulum_swingup.json")?;
    s.horizon = horizon;
    s.dt = fddp_bench::scenario::StepSizes::Uniform(dt);
    s.warm_start = WarmStart::QuasiStaticInterpolation { target: Some(vec![std::f64::consts::PI, 0.0]) };
    s.validate().map_err(|e| e.to_string())?;
    let built = s.build().map_err(|e| e.to_string())?;
    let warm_start = built.xs.iter().map(|x| x[0]).collect();
    let run = |kind| -> Result<Trace, String> {
        let mut solver = Solver::new(built.problem.clone(), kind, Some(built.xs.clone()), built.us.clone())
            .map_err(|e| e.to_string())?;
        let report = solver.solve(&SolverOptions { kind, max_iters, threads: 1, ..s.solver });
        let termination = format!("{:?}", report.termination.as_ref().expect("solve terminates"));
        Ok(Trace::new(&report.records, termination, solver.xs()))
    };
    Ok(Comparison { fddp: run(SolverKind::Fddp)?, ddp: run(SolverKind::Ddp)?, warm_start })
}

#[derive(Debug, Serialize)]
pub struct Contraction {
    /// Gap norm per node before the step.
    pub before: Vec<f64>,
    /// One row per requested step length: gap norm per node after the trial.
    pub after: Vec<Vec<f64>>,
    pub alphas: Vec<f64>,
    pub cost_before: f64,
    pub cost_after: Vec<f64>,
}

/// One FDDP backward pass on the monoped hop from an infeasible guess, then a
/// trial step for every `alpha`.
pub fn gap_contraction(alphas: &[f64]) -> Result<Contraction, String> {
    let s = scenario(HOP, "monoped_hop_warmstart_infeasible.json")?;
    let built = s.build().map_err(|e| e.to_string())?;
    let mut solver = Solver::new(built.problem, SolverKind::Fddp, Some(built.xs), built.us).map_err(|e| e.to_string())?;
    solver.backward_pass(s.solver.initial_regularization).map_err(|e| e.to_string())?;
    let norms = |gaps: &[DVector<f64>]| gaps.iter().map(|g| g.norm()).collect::<Vec<_>>();
    let before = norms(solver.gaps());
    let cost_before = solver.cost();
    let mut after = Vec::with_capacity(alphas.len());
    let mut cost_after = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(format!("step length {alpha} outside (0, 1]"));
        }
        let trial = solver.forward_pass(alpha).map_err(|e| e.to_string())?;
        after.push(norms(&trial.gaps));
        cost_after.push(trial.cost);
    }
    Ok(Contraction { before, after, alphas: alphas.to_vec(), cost_before, cost_after })
}

#[derive(Debug, Serialize)]
pub struct Impact {
    pub foot_velocity_before: Vec<f64>,
    pub foot_velocity_after: Vec<f64>,
    pub impulse: Vec<f64>,
    pub kinetic_before: f64,
    pub kinetic_after: f64,
}

/// The monoped in its hop pose hits the ground with the base moving at
/// `(vx, vz)` and restitution `e`.
pub fn impact(restitution: f64, vx: f64, vz: f64) -> Result<Impact, String> {
    if !(0.0..=1.0).contains(&restitution) {
        return Err(format!("restitution {restitution} outside [0, 1]"));
    }
    let s = scenario(HOP, "monoped_hop_warmstart_infeasible.json")?;
    let model = s.model().map_err(|e| e.to_string())?;
    let system = model.system().ok_or("monoped has no frames")?;
    let nq = system.config_space().nx();
    let q = DVector::from_column_slice(&s.x0[..nq]);
    let mut v = DVector::zeros(system.nv());
    v[0] = vx;
    v[1] = vz;
    let foot = system.frame_index("foot").ok_or("monoped has no foot")?;
    let mass = system.mass_matrix(&q);
    let jc = system.frame_jacobian(&q, foot);
    let res = impulse_dynamics(&mass, &jc, &v, restitution).map_err(|e| e.to_string())?;
    let kinetic = |v: &DVector<f64>| 0.5 * v.dot(&(&mass * v));
    Ok(Impact {
        foot_velocity_before: (&jc * &v).iter().copied().collect(),
        foot_velocity_after: (&jc * &res.v_plus).iter().copied().collect(),
        impulse: res.impulse.iter().copied().collect(),
        kinetic_before: kinetic(&v),
        kinetic_after: kinetic(&res.v_plus),
    })
}

fn json<T: Serialize>(r: Result<T, String>) -> Result<String, JsError> {
    let v = r.map_err(|e| JsError::new(&e))?;
    serde_json::to_string(&v).map_err(|e| JsError::new(&e.to_string()))
}

/// JSON [`Comparison`].
#[wasm_bindgen(js_name = comparePendulum)]
pub fn compare_pendulum_js(horizon: usize, dt: f64, max_iters: usize) -> Result<String, JsError> {
    json(compare_pendulum(horizon, dt, max_iters))
}

/// JSON [`Contraction`].
#[wasm_bindgen(js_name = gapContraction)]
pub fn gap_contraction_js(alphas: Vec<f64>) -> Result<String, JsError> {
    json(gap_contraction(&alphas))
}

/// JSON [`Impact`].
#[wasm_bindgen(js_name = impact)]
pub fn impact_js(restitution: f64, vx: f64, vz: f64) -> Result<String, JsError> {
    json(impact(restitution, vx, vz))
}
