#![allow(dead_code)]

use std::sync::Arc;

use fddp_core::multibody::{Link, Pendulum, PlanarChain, STANDARD_GRAVITY};
use fddp_core::{
    ActionModel, Contact, CostTerm, Dynamics, ImpulseModel, IntegratedActionModel, LinearDynamics, Multibody,
    MultibodyDynamics, ShootingProblem, TerminalModel,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Two masses on springs, forced by two inputs, with a constant drift.
pub fn lqr(n: usize, dt: f64) -> ShootingProblem {
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -2.0, 1.0, -0.1, 0.0, 1.0, -2.0, 0.0, -0.1],
    );
    let b = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    let c = DVector::from_column_slice(&[0.0, 0.0, 0.3, -0.2]);
    let dynamics: Arc<dyn Dynamics> = Arc::new(LinearDynamics::new(a, b, c).unwrap());
    let state_cost = CostTerm::StateRegularization { weight: 1.0, reference: vec![0.0; 4], weights: None };
    let costs = [state_cost.clone(), CostTerm::ControlRegularization { weight: 0.1, reference: None }];
    let model: Arc<dyn ActionModel> = Arc::new(IntegratedActionModel::new(dynamics.clone(), &costs, dt).unwrap());
    let terminal = Arc::new(TerminalModel::for_dynamics(dynamics.as_ref(), &[state_cost]).unwrap());
    ShootingProblem::new(DVector::from_column_slice(&[1.0, -0.5, 0.0, 0.2]), vec![model; n], terminal).unwrap()
}

pub fn pendulum(n: usize, dt: f64) -> ShootingProblem {
    let sys = Arc::new(Pendulum::new(Link::rod(0.5, 1.0), STANDARD_GRAVITY));
    let dynamics: Arc<dyn Dynamics> = Arc::new(MultibodyDynamics::new(sys, vec![]).unwrap());
    let up = vec![std::f64::consts::PI, 0.0];
    let running = [
        CostTerm::StateRegularization { weight: 1e-2, reference: up.clone(), weights: None },
        CostTerm::ControlRegularization { weight: 1e-2, reference: None },
    ];
    let terminal = [CostTerm::StateRegularization { weight: 100.0, reference: up, weights: None }];
    let model: Arc<dyn ActionModel> = Arc::new(IntegratedActionModel::new(dynamics.clone(), &running, dt).unwrap());
    let terminal = Arc::new(TerminalModel::for_dynamics(dynamics.as_ref(), &terminal).unwrap());
    ShootingProblem::new(DVector::zeros(2), vec![model; n], terminal).unwrap()
}

pub fn monoped_system() -> Arc<dyn Multibody> {
    Arc::new(PlanarChain::floating(
        "monoped",
        4.0,
        0.2,
        vec![Link::rod(0.4, 1.0), Link::rod(0.4, 0.6)],
        STANDARD_GRAVITY,
        "foot",
    ))
}

/// Short stance, flight, impact, stance sequence on the floating monoped.
pub fn monoped_hop() -> ShootingProblem {
    let sys = monoped_system();
    let space = sys.config_space().clone();
    let q0 = space.integrate(&space.neutral(), &DVector::from_column_slice(&[0.0, 0.75, 0.1, 0.4, -0.8])).unwrap();
    let foot = sys.frame_position(&q0, 0);
    let x0 = DVector::from_iterator(11, q0.iter().copied().chain(std::iter::repeat(0.0).take(5)));
    let reference = x0.as_slice().to_vec();
    let weights = vec![0.0, 1.0, 10.0, 1.0, 1.0, 0.1, 0.1, 0.1, 0.1, 0.1];
    let costs = vec![
        CostTerm::StateRegularization { weight: 1.0, reference: reference.clone(), weights: Some(weights) },
        CostTerm::ControlRegularization { weight: 1e-3, reference: None },
    ];
    let stance: Arc<dyn Dynamics> = Arc::new(MultibodyDynamics::new(sys.clone(), vec![Contact::new("foot", foot.clone())]).unwrap());
    let flight: Arc<dyn Dynamics> = Arc::new(MultibodyDynamics::new(sys.clone(), vec![]).unwrap());
    let dt = 0.02;
    let mut running: Vec<Arc<dyn ActionModel>> = Vec::new();
    for _ in 0..5 {
        running.push(Arc::new(IntegratedActionModel::new(stance.clone(), &costs, dt).unwrap()));
    }
    for _ in 0..4 {
        running.push(Arc::new(IntegratedActionModel::new(flight.clone(), &costs, dt).unwrap()));
    }
    running.push(Arc::new(ImpulseModel::new(sys.clone(), &[Contact::new("foot", foot)], 0.0, &costs[..1]).unwrap()));
    for _ in 0..5 {
        running.push(Arc::new(IntegratedActionModel::new(stance.clone(), &costs, dt).unwrap()));
    }
    let terminal = Arc::new(TerminalModel::for_dynamics(stance.as_ref(), &costs[..1]).unwrap());
    ShootingProblem::new(x0, running, terminal).unwrap()
}

pub fn zero_controls(problem: &ShootingProblem) -> Vec<DVector<f64>> {
    problem.running().iter().map(|m| DVector::zeros(m.nu())).collect()
}

/// Random states near `x̃₀` and random controls.
pub fn random_guess(problem: &ShootingProblem, rng: &mut ChaCha8Rng, scale: f64) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let space = problem.state();
    let xs = (0..=problem.horizon())
        .map(|_| space.integrate(problem.x0(), &random_vec(rng, space.ndx(), scale)).unwrap())
        .collect();
    let us = problem.running().iter().map(|m| random_vec(rng, m.nu(), scale)).collect();
    (xs, us)
}

/// Cost of `(xs ⊕ dxs, us + dus)`.
pub fn cost_at(problem: &ShootingProblem, xs: &[DVector<f64>], us: &[DVector<f64>], dxs: &[DVector<f64>], dus: &[DVector<f64>]) -> f64 {
    let space = problem.state();
    let xs: Vec<_> = xs.iter().zip(dxs).map(|(x, d)| space.integrate(x, d).unwrap()).collect();
    let us: Vec<_> = us.iter().zip(dus).map(|(u, d)| u + d).collect();
    problem.problem_rollout(&xs, &us).unwrap().0
}
