mod common;

use std::sync::Arc;

use approx::assert_relative_eq;
use common::*;
use fddp_core::action::{ActionData, ActionError};
use fddp_core::kkt::{assemble_kkt, kkt_search_direction};
use fddp_core::solver::{SolverError, Trial};
use fddp_core::{goldstein_accept, solve, ActionModel, Manifold, ShootingProblem, Solver, SolverKind, SolverOptions, Termination};
use nalgebra::{DMatrix, DVector};

fn lqr_optimum(problem: &ShootingProblem) -> f64 {
    let xs = vec![problem.x0().clone(); problem.horizon() + 1];
    let us = zero_controls(problem);
    let dir = kkt_search_direction(problem, &xs, &us).unwrap();
    cost_at(problem, &xs, &us, &dir.dxs, &dir.dus)
}

fn step(solver: &mut Solver, mu: f64, alpha: f64) -> Trial {
    solver.backward_pass(mu).unwrap();
    solver.forward_pass(alpha).unwrap()
}

#[test]
fn goldstein_examples() {
    assert!(goldstein_accept(-0.2, 0.0, -1.0));
    assert!(goldstein_accept(1.5, 0.0, 1.0));
    assert!(!goldstein_accept(-0.05, 0.0, -1.0));
}

/// Scalar model `x⁺ = x + u` with cost `−½u²`, so `Q_uu = −1`.
#[derive(Debug)]
struct Concave(Manifold);

impl ActionModel for Concave {
    fn state(&self) -> &Manifold {
        &self.0
    }

    fn nu(&self) -> usize {
        1
    }

    fn calc(&self, data: &mut ActionData, x: &DVector<f64>, u: &DVector<f64>) -> Result<(), ActionError> {
        data.xnext = x + u;
        data.cost = -0.5 * u[0] * u[0];
        Ok(())
    }

    fn calc_diff(&self, data: &mut ActionData, x: &DVector<f64>, u: &DVector<f64>) -> Result<(), ActionError> {
        self.calc(data, x, u)?;
        data.fx = DMatrix::identity(1, 1);
        data.fu = DMatrix::identity(1, 1);
        data.lu = -u;
        data.luu = -DMatrix::identity(1, 1);
        Ok(())
    }
}

#[derive(Debug)]
struct Zero(Manifold);

impl ActionModel for Zero {
    fn state(&self) -> &Manifold {
        &self.0
    }

    fn nu(&self) -> usize {
        0
    }

    fn calc(&self, data: &mut ActionData, x: &DVector<f64>, _u: &DVector<f64>) -> Result<(), ActionError> {
        data.xnext = x.clone();
        data.cost = 0.0;
        Ok(())
    }

    fn calc_diff(&self, data: &mut ActionData, x: &DVector<f64>, u: &DVector<f64>) -> Result<(), ActionError> {
        self.calc(data, x, u)?;
        data.fx = DMatrix::identity(1, 1);
        Ok(())
    }
}

#[test]
fn indefinite_quu_is_reported_with_its_node() {
    let space = Manifold::vector(1);
    let problem = ShootingProblem::new(DVector::zeros(1), vec![Arc::new(Concave(space.clone()))], Arc::new(Zero(space))).unwrap();
    let mut solver = Solver::new(problem, SolverKind::Fddp, None, vec![DVector::zeros(1)]).unwrap();
    assert_eq!(solver.backward_pass(0.0).unwrap_err(), SolverError::NotPositiveDefinite { node: 0 });
    // raising μ above one restores definiteness; at u = 0 there is nothing to do
    let report = solver.solve(&SolverOptions::default());
    assert_eq!(report.termination, Some(Termination::Converged));
}

#[test]
fn one_node_backward_pass_matches_riccati() {
    // scalar x⁺ = f·x + g·u with running cost (½q·x² + ½r·u²)·Δt and terminal ½p·x²
    let (a, b, q, r, p, dt) = (0.3, 2.0, 1.5, 0.4, 3.0, 0.1);
    let dynamics: Arc<dyn fddp_core::Dynamics> = Arc::new(
        fddp_core::LinearDynamics::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b), DVector::zeros(1)).unwrap(),
    );
    let running = [
        fddp_core::CostTerm::StateRegularization { weight: q, reference: vec![0.0], weights: None },
        fddp_core::CostTerm::ControlRegularization { weight: r, reference: None },
    ];
    let terminal = [fddp_core::CostTerm::StateRegularization { weight: p, reference: vec![0.0], weights: None }];
    let model: Arc<dyn ActionModel> = Arc::new(fddp_core::IntegratedActionModel::new(dynamics.clone(), &running, dt).unwrap());
    let terminal = Arc::new(fddp_core::TerminalModel::for_dynamics(dynamics.as_ref(), &terminal).unwrap());
    let x0 = 0.7;
    let problem = ShootingProblem::new(DVector::from_element(1, x0), vec![model], terminal).unwrap();
    let mut solver = Solver::new(problem, SolverKind::Ddp, None, vec![DVector::zeros(1)]).unwrap();
    let ws = solver.backward_pass(0.0).unwrap().clone();

    let (f, g) = (1.0 + a * dt, b * dt);
    let quu = r * dt + g * p * g;
    let big_k = -(g * p * f) / quu;
    let k = -(g * p * f * x0) / quu;
    let vxx = q * dt + f * p * f - (f * p * g).powi(2) / quu;
    assert_relative_eq!(ws.big_k[0][(0, 0)], big_k, epsilon = 1e-14);
    assert_relative_eq!(ws.k[0][0], k, epsilon = 1e-14);
    assert_relative_eq!(ws.vxx[0][(0, 0)], vxx, epsilon = 1e-13);
}

#[test]
fn zero_step_keeps_a_feasible_iterate() {
    let problem = pendulum(30, 0.02);
    let us: Vec<_> = (0..30).map(|k| DVector::from_element(1, (k as f64 * 0.3).sin())).collect();
    for kind in [SolverKind::Ddp, SolverKind::Fddp] {
        let mut solver = Solver::new(problem.clone(), kind, None, us.clone()).unwrap();
        let xs = solver.xs().to_vec();
        let trial = step(&mut solver, 1e-9, 0.0);
        for (a, b) in trial.xs.iter().zip(&xs) {
            assert_eq!(a, b);
        }
        for (a, b) in trial.us.iter().zip(&us) {
            assert_eq!(a, b);
        }
    }
}

#[test]
fn lqr_full_step_reaches_the_kkt_optimum() {
    let problem = lqr(20, 0.1);
    let optimum = lqr_optimum(&problem);
    let mut rng = rng(5);
    for kind in [SolverKind::Ddp, SolverKind::Fddp] {
        let (xs, us) = random_guess(&problem, &mut rng, 1.0);
        let mut solver = Solver::new(problem.clone(), kind, Some(xs), us).unwrap();
        let trial = step(&mut solver, 0.0, 1.0);
        assert_relative_eq!(trial.cost, optimum, epsilon = 1e-9, max_relative = 1e-12);
        assert!(trial.gaps.iter().all(|g| g.amax() <= 1e-12));
    }
}

#[test]
fn fddp_full_step_matches_ddp_and_half_step_halves_gaps() {
    let problem = pendulum(40, 0.02);
    let mut rng = rng(9);
    let (xs, us) = random_guess(&problem, &mut rng, 0.3);
    let mut solver = Solver::new(problem, SolverKind::Fddp, Some(xs), us).unwrap();
    let gaps = solver.gaps().to_vec();
    solver.backward_pass(1e-9).unwrap();
    let full = solver.forward_pass(1.0).unwrap();
    assert!(full.gaps.iter().all(|g| g.amax() == 0.0));
    let half = solver.forward_pass(0.5).unwrap();
    for (new, old) in half.gaps.iter().zip(&gaps) {
        assert_relative_eq!(*new, old * 0.5, epsilon = 1e-12);
    }
}

#[test]
fn expected_improvement_is_exact_on_lqr() {
    let problem = lqr(20, 0.1);
    let mut rng = rng(21);
    // zero gaps: the classical model
    let us: Vec<_> = (0..20).map(|_| random_vec(&mut rng, 2, 1.0)).collect();
    let mut solver = Solver::new(problem.clone(), SolverKind::Fddp, None, us).unwrap();
    let ws = solver.backward_pass(0.0).unwrap().clone();
    let (d1, d2) = solver.expected_improvement().unwrap();
    let classic1: f64 = ws.k.iter().zip(&ws.qu).map(|(k, qu)| k.dot(qu)).sum();
    let classic2: f64 = ws.k.iter().zip(&ws.quu).map(|(k, quu)| k.dot(&(quu * k))).sum();
    assert_relative_eq!(d1, classic1, max_relative = 1e-12);
    assert_relative_eq!(d2, classic2, max_relative = 1e-12);
    for alpha in fddp_core::solver::step_lengths() {
        let trial = solver.forward_pass(alpha).unwrap();
        assert_relative_eq!(trial.cost - solver.cost(), d1 * alpha + 0.5 * d2 * alpha * alpha, epsilon = 1e-9);
    }

    // open gaps: still exact along the FDDP path
    let (xs, us) = random_guess(&problem, &mut rng, 1.0);
    let mut solver = Solver::new(problem, SolverKind::Fddp, Some(xs), us).unwrap();
    solver.backward_pass(0.0).unwrap();
    let (d1, d2) = solver.expected_improvement().unwrap();
    for alpha in fddp_core::solver::step_lengths() {
        let trial = solver.forward_pass(alpha).unwrap();
        assert_relative_eq!(trial.cost - solver.cost(), d1 * alpha + 0.5 * d2 * alpha * alpha, epsilon = 1e-9);
    }
}

#[test]
fn no_direction_predicts_no_change() {
    let problem = lqr(10, 0.1);
    let (xs, us, _) = solve(problem.clone(), None, zero_controls(&problem), &SolverOptions { tolerance: 1e-12, ..Default::default() }).unwrap();
    let mut solver = Solver::new(problem, SolverKind::Fddp, Some(xs), us).unwrap();
    solver.backward_pass(0.0).unwrap();
    let (d1, d2) = solver.expected_improvement().unwrap();
    assert!(d1.abs() < 1e-12 && d2.abs() < 1e-10, "{d1} {d2}");
}

#[test]
fn lqr_converges_in_two_iterations() {
    let problem = lqr(20, 0.1);
    let optimum = lqr_optimum(&problem);
    let mut rng = rng(2);
    let (xs, us) = random_guess(&problem, &mut rng, 2.0);
    let (_, _, report) = solve(problem, Some(xs), us, &SolverOptions::default()).unwrap();
    assert_eq!(report.termination, Some(Termination::Converged));
    assert!(report.iterations() <= 2);
    assert_relative_eq!(report.records.last().unwrap().cost, optimum, epsilon = 1e-8);
}

#[test]
fn zero_iterations_is_max_iters() {
    let problem = pendulum(10, 0.02);
    let us = zero_controls(&problem);
    let (_, _, report) = solve(problem, None, us, &SolverOptions { max_iters: 0, ..Default::default() }).unwrap();
    assert_eq!(report.termination, Some(Termination::MaxIters));
    assert_eq!(report.records.len(), 1);
    assert_eq!(report.iterations(), 0);
}

#[test]
fn pendulum_swing_up_converges() {
    let problem = pendulum(200, 0.01);
    let us = zero_controls(&problem);
    for kind in [SolverKind::Fddp, SolverKind::Ddp] {
        let options = SolverOptions { kind, ..Default::default() };
        let (xs, _, report) = solve(problem.clone(), None, us.clone(), &options).unwrap();
        assert_eq!(report.termination, Some(Termination::Converged), "{kind}");
        assert!(report.iterations() <= 100);
        assert!((xs[200][0] - std::f64::consts::PI).abs() < 0.1, "{kind} ends at {}", xs[200][0]);
    }
}

#[test]
fn kkt_hand_solution_for_one_scalar_node() {
    // x⁺ = f·x + g·u + c, cost (½q·x² + ½r·u²)·Δt + ½p·x₁², from an infeasible guess
    let (a, b, cc, q, r, p, dt) = (0.5, 1.0, 0.2, 2.0, 1.0, 4.0, 0.1);
    let dynamics: Arc<dyn fddp_core::Dynamics> = Arc::new(
        fddp_core::LinearDynamics::new(DMatrix::from_element(1, 1, a), DMatrix::from_element(1, 1, b), DVector::from_element(1, cc)).unwrap(),
    );
    let running = [
        fddp_core::CostTerm::StateRegularization { weight: q, reference: vec![0.0], weights: None },
        fddp_core::CostTerm::ControlRegularization { weight: r, reference: None },
    ];
    let terminal = [fddp_core::CostTerm::StateRegularization { weight: p, reference: vec![0.0], weights: None }];
    let model: Arc<dyn ActionModel> = Arc::new(fddp_core::IntegratedActionModel::new(dynamics.clone(), &running, dt).unwrap());
    let terminal = Arc::new(fddp_core::TerminalModel::for_dynamics(dynamics.as_ref(), &terminal).unwrap());
    let problem = ShootingProblem::new(DVector::from_element(1, 1.0), vec![model], terminal).unwrap();
    let (x0, u0, x1) = (0.8, 0.3, -0.4);
    let xs = vec![DVector::from_element(1, x0), DVector::from_element(1, x1)];
    let us = vec![DVector::from_element(1, u0)];

    let (f, g) = (1.0 + a * dt, b * dt);
    let gap0 = 1.0 - x0;
    let gap1 = f * x0 + g * u0 + cc * dt - x1;
    #[rustfmt::skip]
    let kkt = DMatrix::from_row_slice(5, 5, &[
        q * dt, 0.0,    0.0, 1.0, -f,
        0.0,    r * dt, 0.0, 0.0, -g,
        0.0,    0.0,    p,   0.0, 1.0,
        1.0,    0.0,    0.0, 0.0, 0.0,
        -f,     -g,     1.0, 0.0, 0.0,
    ]);
    let rhs = DVector::from_column_slice(&[-q * dt * x0, -r * dt * u0, -p * x1, gap0, gap1]);
    let hand = kkt.clone().lu().solve(&rhs).unwrap();

    let system = assemble_kkt(&problem, &xs, &us).unwrap();
    assert_relative_eq!(system.matrix, kkt, epsilon = 1e-15);
    let dir = kkt_search_direction(&problem, &xs, &us).unwrap();
    assert_relative_eq!(dir.dxs[0][0], hand[0], epsilon = 1e-14);
    assert_relative_eq!(dir.dus[0][0], hand[1], epsilon = 1e-14);
    assert_relative_eq!(dir.dxs[1][0], hand[2], epsilon = 1e-14);
    assert_relative_eq!(dir.multipliers[0][0], hand[3], epsilon = 1e-13);
    assert_relative_eq!(dir.multipliers[1][0], hand[4], epsilon = 1e-13);
}

#[test]
fn kkt_direction_keeps_a_feasible_iterate_feasible() {
    let problem = pendulum(20, 0.05);
    let us: Vec<_> = (0..20).map(|k| DVector::from_element(1, 0.1 * k as f64)).collect();
    let xs = problem.rollout(&us).unwrap();
    let dir = kkt_search_direction(&problem, &xs, &us).unwrap();
    let mut data = problem.create_data();
    problem.calc_diff(&mut data, &xs, &us, None).unwrap();
    assert!(dir.dxs[0].amax() <= 1e-10);
    for k in 0..20 {
        let d = &data.nodes[k];
        let residual = &dir.dxs[k + 1] - &d.fx * &dir.dxs[k] - &d.fu * &dir.dus[k];
        assert!(residual.amax() <= 1e-10);
    }
}

#[test]
fn fddp_full_step_is_the_newton_step() {
    let problem = lqr(20, 0.1);
    let mut rng = rng(17);
    for _ in 0..5 {
        let (xs, us) = random_guess(&problem, &mut rng, 1.0);
        let dir = kkt_search_direction(&problem, &xs, &us).unwrap();
        let mut solver = Solver::new(problem.clone(), SolverKind::Fddp, Some(xs.clone()), us.clone()).unwrap();
        let trial = step(&mut solver, 0.0, 1.0);
        for k in 0..=20 {
            assert_relative_eq!(&trial.xs[k] - &xs[k], dir.dxs[k], epsilon = 1e-8);
        }
        for k in 0..20 {
            assert_relative_eq!(&trial.us[k] - &us[k], dir.dus[k], epsilon = 1e-8);
        }
    }
}

#[test]
fn monoped_gaps_contract_on_the_manifold() {
    let problem = monoped_hop();
    let mut rng = rng(4);
    let (xs, _) = random_guess(&problem, &mut rng, 0.05);
    let us = zero_controls(&problem);
    let mut solver = Solver::new(problem, SolverKind::Fddp, Some(xs), us).unwrap();
    let gaps = solver.gaps().to_vec();
    solver.backward_pass(1e-6).unwrap();
    for alpha in [1.0, 0.5, 0.125] {
        let trial = solver.forward_pass(alpha).unwrap();
        for (new, old) in trial.gaps.iter().zip(&gaps) {
            assert_relative_eq!(*new, old * (1.0 - alpha), epsilon = 1e-10);
        }
    }
}

#[test]
fn parallel_solves_are_bit_identical() {
    let problem = monoped_hop();
    let us = zero_controls(&problem);
    let run = |threads| {
        let options = SolverOptions { threads, max_iters: 20, ..Default::default() };
        solve(problem.clone(), None, us.clone(), &options).unwrap()
    };
    let (xs1, us1, r1) = run(1);
    let (xs4, us4, r4) = run(4);
    assert_eq!(xs1, xs4);
    assert_eq!(us1, us4);
    assert_eq!(r1.records, r4.records);
}
