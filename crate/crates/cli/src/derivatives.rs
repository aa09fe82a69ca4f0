//! Analytic derivatives against central finite differences.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use fddp_core::action::finite_difference_derivatives;
use fddp_core::manifold::Manifold;
use fddp_core::{ActionData, ActionError, ActionModel, ShootingProblem};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DEFAULT_SEED: u64 = 0;
pub const TOLERANCE: f64 = 1e-4;
/// Below this magnitude errors are measured absolutely.
pub const ERROR_FLOOR: f64 = 1e-2;
/// Half-widths of the sampling boxes around `x0` (tangent) and zero (controls).
pub const STATE_SPREAD: f64 = 0.5;
pub const CONTROL_SPREAD: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Block {
    Fx,
    Fu,
    Lx,
    Lu,
}

impl Block {
    pub const ALL: [Block; 4] = [Block::Fx, Block::Fu, Block::Lx, Block::Lu];

    fn of(self, d: &ActionData) -> DMatrix<f64> {
        let col = |v: &DVector<f64>| DMatrix::from_column_slice(v.len(), 1, v.as_slice());
        match self {
            Block::Fx => d.fx.clone(),
            Block::Fu => d.fu.clone(),
            Block::Lx => col(&d.lx),
            Block::Lu => col(&d.lu),
        }
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Block::Fx => "fx",
            Block::Fu => "fu",
            Block::Lx => "lx",
            Block::Lu => "lu",
        })
    }
}

impl FromStr for Block {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Block::ALL
            .into_iter()
            .find(|b| b.to_string() == s)
            .ok_or_else(|| format!("unknown block `{s}`, expected fx, fu, lx or lu"))
    }
}

/// Worst error of one block over all samples, for one distinct model.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockError {
    /// Nodes sharing the model; the first is the one reported.
    pub nodes: Vec<usize>,
    pub block: Block,
    pub max_error: f64,
}

#[derive(Debug, Clone, Default)]
pub struct DerivativeReport {
    pub rows: Vec<BlockError>,
}

impl DerivativeReport {
    pub fn worst(&self) -> f64 {
        self.rows.iter().map(|r| r.max_error).fold(0.0, f64::max)
    }

    pub fn failures(&self) -> impl Iterator<Item = &BlockError> {
        self.rows.iter().filter(|r| !(r.max_error <= TOLERANCE))
    }

    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }
}

impl fmt::Display for DerivativeReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "node,shared_by,block,max_error,status")?;
        for r in &self.rows {
            let status = if r.max_error <= TOLERANCE { "ok" } else { "FAIL" };
            writeln!(f, "{},{},{},{:e},{status}", r.nodes[0], r.nodes.len(), r.block, r.max_error)?;
        }
        Ok(())
    }
}

/// `max |a − f| / max(|f|, 1e-2)` over all entries.
pub fn relative_error(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    if analytic.shape() != numeric.shape() {
        return f64::INFINITY;
    }
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, f)| {
            let e = (a - f).abs() / f.abs().max(ERROR_FLOOR);
            if e.is_nan() {
                f64::INFINITY
            } else {
                e
            }
        })
        .fold(0.0, f64::max)
}

/// Shifts entry `(0, 0)` of one analytic block; for exercising the checker.
#[derive(Debug)]
pub struct Corrupted {
    inner: Arc<dyn ActionModel>,
    block: Block,
}

impl Corrupted {
    pub fn new(inner: Arc<dyn ActionModel>, block: Block) -> Self {
        Corrupted { inner, block }
    }
}

impl ActionModel for Corrupted {
    fn state(&self) -> &Manifold {
        self.inner.state()
    }
    fn nu(&self) -> usize {
        self.inner.nu()
    }
    fn dt(&self) -> f64 {
        self.inner.dt()
    }
    fn calc(&self, data: &mut ActionData, x: &DVector<f64>, u: &DVector<f64>) -> Result<(), ActionError> {
        self.inner.calc(data, x, u)
    }
    fn calc_diff(&self, data: &mut ActionData, x: &DVector<f64>, u: &DVector<f64>) -> Result<(), ActionError> {
        self.inner.calc_diff(data, x, u)?;
        let entry = match self.block {
            Block::Fx => data.fx.get_mut((0, 0)),
            Block::Fu => data.fu.get_mut((0, 0)),
            Block::Lx => data.lx.get_mut(0),
            Block::Lu => data.lu.get_mut(0),
        };
        if let Some(v) = entry {
            *v += 0.1 * (1.0 + v.abs());
        }
        Ok(())
    }
    fn quasi_static(&self, x: &DVector<f64>) -> Result<DVector<f64>, ActionError> {
        self.inner.quasi_static(x)
    }
}

/// Wraps every node model of `problem` in [`Corrupted`], keeping shared
/// models shared.
pub fn corrupt(problem: &ShootingProblem, block: Block) -> Result<ShootingProblem, String> {
    let mut wrapped: Vec<(Arc<dyn ActionModel>, Arc<dyn ActionModel>)> = Vec::new();
    let mut wrap = |m: &Arc<dyn ActionModel>| -> Arc<dyn ActionModel> {
        if let Some((_, w)) = wrapped.iter().find(|(o, _)| Arc::ptr_eq(o, m)) {
            return w.clone();
        }
        let w: Arc<dyn ActionModel> = Arc::new(Corrupted::new(m.clone(), block));
        wrapped.push((m.clone(), w.clone()));
        w
    };
    let running = problem.running().iter().map(&mut wrap).collect();
    let terminal = wrap(problem.terminal());
    ShootingProblem::new(problem.x0().clone(), running, terminal).map_err(|e| e.to_string())
}

/// Compares analytic and numeric blocks at `samples` random `(x, u)` for
/// every distinct model of `problem`. States are drawn around `x0`.
pub fn check_derivatives(problem: &ShootingProblem, samples: usize, seed: u64) -> Result<DerivativeReport, ActionError> {
    let mut distinct: Vec<(Arc<dyn ActionModel>, Vec<usize>)> = Vec::new();
    let all = problem.running().iter().chain(std::iter::once(problem.terminal()));
    for (k, m) in all.enumerate() {
        match distinct.iter_mut().find(|(d, _)| Arc::ptr_eq(d, m)) {
            Some((_, nodes)) => nodes.push(k),
            None => distinct.push((m.clone(), vec![k])),
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = DerivativeReport::default();
    for (model, nodes) in distinct {
        let space = model.state();
        let mut worst = [0.0f64; 4];
        for _ in 0..samples {
            let dx = DVector::from_fn(space.ndx(), |_, _| rng.random_range(-STATE_SPREAD..STATE_SPREAD));
            let u = DVector::from_fn(model.nu(), |_, _| rng.random_range(-CONTROL_SPREAD..CONTROL_SPREAD));
            let x = space.integrate(problem.x0(), &dx)?;
            let mut analytic = model.create_data();
            model.calc_diff(&mut analytic, &x, &u)?;
            let numeric = finite_difference_derivatives(model.as_ref(), &x, &u)?;
            for (w, block) in worst.iter_mut().zip(Block::ALL) {
                *w = w.max(relative_error(&block.of(&analytic), &block.of(&numeric)));
            }
        }
        for (w, block) in worst.into_iter().zip(Block::ALL) {
            report.rows.push(BlockError { nodes: nodes.clone(), block, max_error: w });
        }
    }
    Ok(report)
}
