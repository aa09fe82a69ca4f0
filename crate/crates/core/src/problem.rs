//! Multiple-shooting problem: a chain of action models anchored at `x̃₀`.

use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use rayon::ThreadPool;
use thiserror::Error;

use crate::action::{ActionData, ActionError, ActionModel};
use crate::manifold::Manifold;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error("node {node}: {source}")]
    Node { node: usize, source: ActionError },
    #[error("{0}")]
    Invalid(String),
}

impl ProblemError {
    fn at(node: usize) -> impl Fn(ActionError) -> ProblemError {
        move |source| ProblemError::Node { node, source }
    }
}

#[derive(Debug, Clone)]
pub struct ShootingProblem {
    x0: DVector<f64>,
    running: Vec<Arc<dyn ActionModel>>,
    terminal: Arc<dyn ActionModel>,
}

/// Per-node data containers, the last one for the terminal model.
#[derive(Debug, Clone)]
pub struct ProblemData {
    pub nodes: Vec<ActionData>,
}

impl ShootingProblem {
    pub fn new(
        x0: DVector<f64>,
        running: Vec<Arc<dyn ActionModel>>,
        terminal: Arc<dyn ActionModel>,
    ) -> Result<Self, ProblemError> {
        if running.is_empty() {
            return Err(ProblemError::Invalid("a shooting problem needs at least one running node".into()));
        }
        let spec = terminal.state().spec();
        if let Some(k) = running.iter().position(|m| m.state().spec() != spec) {
            return Err(ProblemError::Invalid(format!("node {k} lives on a different state manifold")));
        }
        if terminal.nu() != 0 {
            return Err(ProblemError::Invalid("the terminal model must take no control".into()));
        }
        terminal.state().check_point(&x0).map_err(|e| ProblemError::Invalid(format!("initial state: {e}")))?;
        Ok(ShootingProblem { x0, running, terminal })
    }

    /// Number of running nodes `N`.
    pub fn horizon(&self) -> usize {
        self.running.len()
    }

    pub fn x0(&self) -> &DVector<f64> {
        &self.x0
    }

    pub fn set_x0(&mut self, x0: DVector<f64>) -> Result<(), ProblemError> {
        self.state().check_point(&x0).map_err(|e| ProblemError::Invalid(format!("initial state: {e}")))?;
        self.x0 = x0;
        Ok(())
    }

    pub fn state(&self) -> &Manifold {
        self.terminal.state()
    }

    pub fn running(&self) -> &[Arc<dyn ActionModel>] {
        &self.running
    }

    pub fn terminal(&self) -> &Arc<dyn ActionModel> {
        &self.terminal
    }

    /// Model of node `k`, `k = N` being the terminal one.
    pub fn model(&self, k: usize) -> &dyn ActionModel {
        if k < self.running.len() {
            self.running[k].as_ref()
        } else {
            self.terminal.as_ref()
        }
    }

    pub fn create_data(&self) -> ProblemData {
        let nodes = (0..=self.horizon()).map(|k| self.model(k).create_data()).collect();
        ProblemData { nodes }
    }

    pub fn check_trajectory(&self, xs: &[DVector<f64>], us: &[DVector<f64>]) -> Result<(), ProblemError> {
        let n = self.horizon();
        if xs.len() != n + 1 || us.len() != n {
            return Err(ProblemError::Invalid(format!(
                "expected {} states and {n} controls, got {} and {}",
                n + 1,
                xs.len(),
                us.len()
            )));
        }
        for (k, x) in xs.iter().enumerate() {
            self.state().check_point(x).map_err(|e| ProblemError::Invalid(format!("state {k}: {e}")))?;
        }
        for (k, u) in us.iter().enumerate() {
            if u.len() != self.running[k].nu() {
                return Err(ProblemError::Invalid(format!(
                    "control {k} has {} entries, expected {}",
                    u.len(),
                    self.running[k].nu()
                )));
            }
        }
        Ok(())
    }

    /// Evaluates every node and returns the total cost.
    pub fn calc(&self, data: &mut ProblemData, xs: &[DVector<f64>], us: &[DVector<f64>]) -> Result<f64, ProblemError> {
        self.check_trajectory(xs, us)?;
        let empty = DVector::zeros(0);
        let mut cost = 0.0;
        for (k, d) in data.nodes.iter_mut().enumerate() {
            let u = us.get(k).unwrap_or(&empty);
            self.model(k).calc(d, &xs[k], u).map_err(ProblemError::at(k))?;
            cost += d.cost;
        }
        Ok(cost)
    }

    /// Computes all derivatives, in parallel over nodes when a pool is given.
    /// Results do not depend on the pool.
    pub fn calc_diff(
        &self,
        data: &mut ProblemData,
        xs: &[DVector<f64>],
        us: &[DVector<f64>],
        pool: Option<&ThreadPool>,
    ) -> Result<f64, ProblemError> {
        self.check_trajectory(xs, us)?;
        let empty = DVector::zeros(0);
        let eval = |(k, d): (usize, &mut ActionData)| {
            let u = us.get(k).unwrap_or(&empty);
            self.model(k).calc_diff(d, &xs[k], u).map_err(ProblemError::at(k))
        };
        let results: Vec<Result<(), ProblemError>> = match pool {
            Some(pool) => pool.install(|| data.nodes.par_iter_mut().enumerate().map(eval).collect()),
            None => data.nodes.iter_mut().enumerate().map(eval).collect(),
        };
        results.into_iter().collect::<Result<Vec<()>, _>>()?;
        Ok(data.nodes.iter().map(|d| d.cost).sum())
    }

    /// Gaps `f̄₀ = x̃₀ ⊖ x₀` and `f̄ₖ₊₁ = f(xₖ, uₖ) ⊖ xₖ₊₁`, from data filled by
    /// [`ShootingProblem::calc`] or [`ShootingProblem::calc_diff`].
    pub fn gaps(&self, data: &ProblemData, xs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>, ProblemError> {
        let space = self.state();
        let invalid = |e: crate::manifold::ManifoldError| ProblemError::Invalid(e.to_string());
        let mut gaps = Vec::with_capacity(xs.len());
        gaps.push(space.difference(&xs[0], &self.x0).map_err(invalid)?);
        for k in 0..self.horizon() {
            gaps.push(space.difference(&xs[k + 1], &data.nodes[k].xnext).map_err(invalid)?);
        }
        Ok(gaps)
    }

    /// Cost and gaps of a (possibly infeasible) guess.
    pub fn problem_rollout(
        &self,
        xs: &[DVector<f64>],
        us: &[DVector<f64>],
    ) -> Result<(f64, Vec<DVector<f64>>), ProblemError> {
        let mut data = self.create_data();
        let cost = self.calc(&mut data, xs, us)?;
        Ok((cost, self.gaps(&data, xs)?))
    }

    /// States obtained by applying `us` from `x̃₀`.
    pub fn rollout(&self, us: &[DVector<f64>]) -> Result<Vec<DVector<f64>>, ProblemError> {
        if us.len() != self.horizon() {
            return Err(ProblemError::Invalid(format!("expected {} controls, got {}", self.horizon(), us.len())));
        }
        let mut xs = Vec::with_capacity(us.len() + 1);
        xs.push(self.x0.clone());
        for (k, model) in self.running.iter().enumerate() {
            let mut d = model.create_data();
            model.calc(&mut d, &xs[k], &us[k]).map_err(ProblemError::at(k))?;
            xs.push(d.xnext);
        }
        Ok(xs)
    }

    /// Quasi-static controls along `xs`; nodes where no static control exists
    /// fall back to the least-squares best iterate.
    pub fn quasi_static(&self, xs: &[DVector<f64>]) -> Result<Vec<DVector<f64>>, ProblemError> {
        self.running
            .iter()
            .enumerate()
            .map(|(k, m)| match m.quasi_static(&xs[k]) {
                Ok(u) => Ok(u),
                Err(ActionError::QuasiStatic { best, .. }) => Ok(best),
                Err(e) => Err(ProblemError::Node { node: k, source: e }),
            })
            .collect()
    }

    pub fn l2_norm(gaps: &[DVector<f64>]) -> f64 {
        gaps.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::action::{CostTerm, IntegratedActionModel, TerminalModel};
    use crate::dynamics::{LinearDynamics, MultibodyDynamics};
    use crate::multibody::PointMass;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lqr(n: usize, dt: f64) -> (ShootingProblem, DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.2]);
        let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let c = DVector::from_column_slice(&[0.05, -0.1]);
        let dynamics = Arc::new(LinearDynamics::new(a.clone(), b.clone(), c.clone()).unwrap());
        let costs = [
            CostTerm::StateRegularization { weight: 1.0, reference: vec![0.0, 0.0], weights: None },
            CostTerm::ControlRegularization { weight: 0.1, reference: None },
        ];
        let model: Arc<dyn ActionModel> = Arc::new(IntegratedActionModel::new(dynamics.clone(), &costs, dt).unwrap());
        let terminal = Arc::new(TerminalModel::for_dynamics(dynamics.as_ref(), &costs[..1]).unwrap());
        let x0 = DVector::from_column_slice(&[1.0, 0.0]);
        let problem = ShootingProblem::new(x0, vec![model; n], terminal).unwrap();
        let f = DMatrix::identity(2, 2) + a * dt;
        (problem, f, b * dt, c * dt)
    }

    #[test]
    fn feasible_guess_has_zero_gaps() {
        let (problem, ..) = lqr(10, 0.1);
        let us: Vec<_> = (0..10).map(|k| DVector::from_element(1, k as f64 * 0.1)).collect();
        let xs = problem.rollout(&us).unwrap();
        let (_, gaps) = problem.problem_rollout(&xs, &us).unwrap();
        assert!(gaps.iter().all(|g| g.iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn equilibrium_has_zero_gaps() {
        let dynamics = Arc::new(MultibodyDynamics::new(Arc::new(PointMass::new("di", 1, 1.0, 0.0)), vec![]).unwrap());
        let model: Arc<dyn ActionModel> = Arc::new(IntegratedActionModel::new(dynamics.clone(), &[], 0.1).unwrap());
        let terminal = Arc::new(TerminalModel::for_dynamics(dynamics.as_ref(), &[]).unwrap());
        let x0 = DVector::from_column_slice(&[0.4, 0.0]);
        let problem = ShootingProblem::new(x0.clone(), vec![model; 5], terminal).unwrap();
        let (_, gaps) = problem.problem_rollout(&vec![x0; 6], &vec![DVector::zeros(1); 5]).unwrap();
        assert!(gaps.iter().all(|g| g.norm() == 0.0));
    }

    #[test]
    fn lqr_gaps_match_dense_evaluation() {
        let (problem, f, g, c) = lqr(8, 0.05);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<_> = (0..9).map(|_| DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0))).collect();
        let us: Vec<_> = (0..8).map(|_| DVector::from_fn(1, |_, _| rng.random_range(-1.0..1.0))).collect();
        let (_, gaps) = problem.problem_rollout(&xs, &us).unwrap();
        assert_relative_eq!(gaps[0], problem.x0() - &xs[0], epsilon = 1e-15);
        for k in 0..8 {
            let expected = &f * &xs[k] + &g * &us[k] + &c - &xs[k + 1];
            assert_relative_eq!(gaps[k + 1], expected, epsilon = 1e-14);
        }
    }

    #[test]
    fn parallel_derivatives_are_identical() {
        let (problem, ..) = lqr(16, 0.05);
        let xs = vec![DVector::from_element(2, 0.3); 17];
        let us = vec![DVector::from_element(1, -0.2); 16];
        let mut serial = problem.create_data();
        let mut parallel = problem.create_data();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
        problem.calc_diff(&mut serial, &xs, &us, None).unwrap();
        problem.calc_diff(&mut parallel, &xs, &us, Some(&pool)).unwrap();
        for (a, b) in serial.nodes.iter().zip(&parallel.nodes) {
            assert_eq!(a.fx, b.fx);
            assert_eq!(a.lx, b.lx);
            assert_eq!(a.cost, b.cost);
        }
    }

    #[test]
    fn malformed_problems_are_rejected() {
        let (problem, ..) = lqr(3, 0.1);
        assert!(problem.problem_rollout(&vec![DVector::zeros(2); 3], &vec![DVector::zeros(1); 3]).is_err());
        assert!(problem.rollout(&vec![DVector::zeros(2); 3]).is_err());
        assert!(ShootingProblem::new(DVector::zeros(2), vec![], problem.terminal().clone()).is_err());
    }
}
