//! Scenario files: parsing, validation and problem construction.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use fddp_core::{
    ActionModel, Contact, CostTerm, Dynamics, ImpulseModel, IntegratedActionModel, MultibodyDynamics, ShootingProblem,
    SolverOptions, TerminalModel,
};
use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalogue::{self, CatalogueModel};
use crate::solution;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}:{column}: field `{field}`: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, field: String, message: String },
    #[error("unknown model_id `{0}` (known: {ids})", ids = catalogue::MODEL_IDS.join(", "))]
    UnknownModel(String),
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("cannot build problem: {0}")]
    Build(String),
}

/// Either one step size for every node or one per node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StepSizes {
    Uniform(f64),
    PerNode(Vec<f64>),
}

impl StepSizes {
    pub fn at(&self, k: usize) -> f64 {
        match self {
            StepSizes::Uniform(dt) => *dt,
            StepSizes::PerNode(dts) => dts[k],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactSpec {
    pub frame: String,
    /// Defaults to the frame position at `x0`.
    #[serde(default)]
    pub reference: Option<Vec<f64>>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_beta")]
    pub beta: f64,
}

fn default_alpha() -> f64 {
    100.0
}

fn default_beta() -> f64 {
    20.0
}

/// Nodes `start..end` share one contact set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Phase {
    pub start: usize,
    pub end: usize,
    #[serde(default)]
    pub contacts: Vec<ContactSpec>,
}

/// An impact at the first node of a phase; that node becomes an impulse node
/// using the contacts of the phase it opens.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Switch {
    pub node: usize,
    #[serde(default)]
    pub restitution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "snake_case", deny_unknown_fields)]
pub enum WarmStart {
    /// States interpolated on the manifold from `x0` to `target` (default
    /// `x0`), controls holding each state at rest.
    QuasiStaticInterpolation {
        #[serde(default)]
        target: Option<Vec<f64>>,
    },
    /// `x0` at every node, zero controls.
    Zeros,
    /// A `solution.csv` written by an earlier run, relative to the scenario.
    File { path: PathBuf },
}

impl Default for WarmStart {
    fn default() -> Self {
        WarmStart::QuasiStaticInterpolation { target: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub model_id: String,
    pub horizon: usize,
    pub dt: StepSizes,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub phases: Vec<Phase>,
    #[serde(default)]
    pub switches: Vec<Switch>,
    pub running_costs: Vec<CostTerm>,
    pub terminal_costs: Vec<CostTerm>,
    #[serde(default)]
    pub warm_start: WarmStart,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.into(), source })?;
    let mut scenario = parse_scenario(&text, path)?;
    scenario.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    scenario.validate()?;
    Ok(scenario)
}

/// Parses without validating; `path` only labels errors.
pub fn parse_scenario(text: &str, path: &Path) -> Result<Scenario, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        let inner = e.into_inner();
        ScenarioError::Parse {
            path: path.into(),
            line: inner.line(),
            column: inner.column(),
            field,
            message: inner.to_string(),
        }
    })
}

/// A problem ready to solve, with its warm start.
#[derive(Debug, Clone)]
pub struct Built {
    pub problem: ShootingProblem,
    pub xs: Vec<DVector<f64>>,
    pub us: Vec<DVector<f64>>,
}

impl Scenario {
    pub fn model(&self) -> Result<CatalogueModel, ScenarioError> {
        catalogue::lookup(&self.model_id).ok_or_else(|| ScenarioError::UnknownModel(self.model_id.clone()))
    }

    /// Phases in node order, or one contact-free phase when none are given.
    pub fn phases(&self) -> Vec<Phase> {
        if self.phases.is_empty() {
            return vec![Phase { start: 0, end: self.horizon, contacts: vec![] }];
        }
        let mut phases = self.phases.clone();
        phases.sort_by_key(|p| (p.start, p.end));
        phases
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let invalid = |msg: String| Err(ScenarioError::Validation(msg));
        let model = self.model()?;
        let n = self.horizon;
        if n == 0 {
            return invalid("horizon must be at least 1".into());
        }
        match &self.dt {
            StepSizes::Uniform(dt) if !(dt.is_finite() && *dt > 0.0) => {
                return invalid(format!("dt must be positive, got {dt}"));
            }
            StepSizes::PerNode(dts) if dts.len() != n => {
                return invalid(format!("dt lists {} step sizes for horizon {n}", dts.len()));
            }
            StepSizes::PerNode(dts) => {
                if let Some(k) = dts.iter().position(|dt| !(dt.is_finite() && *dt > 0.0)) {
                    return invalid(format!("dt[{k}] must be positive, got {}", dts[k]));
                }
            }
            _ => {}
        }
        if self.x0.len() != model.nx() {
            return invalid(format!("x0 has {} entries, model `{}` needs {}", self.x0.len(), self.model_id, model.nx()));
        }

        let phases = self.phases();
        for p in &phases {
            if p.start >= p.end || p.end > n {
                return invalid(format!("phase [{}, {}) is empty or outside [0, {n})", p.start, p.end));
            }
        }
        for w in phases.windows(2) {
            if w[1].start < w[0].end {
                return invalid(format!(
                    "phases [{}, {}) and [{}, {}) overlap",
                    w[0].start, w[0].end, w[1].start, w[1].end
                ));
            }
            if w[1].start > w[0].end {
                return invalid(format!("phases leave nodes [{}, {}) uncovered", w[0].end, w[1].start));
            }
        }
        if phases[0].start != 0 {
            return invalid(format!("phases leave nodes [0, {}) uncovered", phases[0].start));
        }
        let last = phases.last().expect("nonempty").end;
        if last != n {
            return invalid(format!("phases leave nodes [{last}, {n}) uncovered"));
        }
        for p in &phases {
            for c in &p.contacts {
                let Some(system) = model.system() else {
                    return invalid(format!("model `{}` has no frames, contact on `{}` is not allowed", self.model_id, c.frame));
                };
                if system.frame_index(&c.frame).is_none() {
                    return invalid(format!("unknown frame `{}` (model `{}` has {:?})", c.frame, self.model_id, system.frame_names()));
                }
                if c.alpha < 0.0 || c.beta < 0.0 {
                    return invalid(format!("contact gains on `{}` must be nonnegative", c.frame));
                }
                if let Some(r) = &c.reference {
                    if r.len() != system.workspace_dim() {
                        return invalid(format!("reference for `{}` has {} entries, expected {}", c.frame, r.len(), system.workspace_dim()));
                    }
                }
            }
        }

        let mut seen = Vec::new();
        for s in &self.switches {
            let Some(p) = phases.iter().find(|p| p.start == s.node && s.node > 0) else {
                return invalid(format!("switch node {} is not on an interior phase boundary", s.node));
            };
            if p.contacts.is_empty() {
                return invalid(format!("switch node {} opens a phase without contacts", s.node));
            }
            if !(0.0..=1.0).contains(&s.restitution) {
                return invalid(format!("restitution at switch node {} must lie in [0, 1]", s.node));
            }
            if seen.contains(&s.node) {
                return invalid(format!("duplicate switch node {}", s.node));
            }
            seen.push(s.node);
        }
        if let WarmStart::QuasiStaticInterpolation { target: Some(target) } = &self.warm_start {
            if target.len() != model.nx() {
                return invalid(format!("warm-start target has {} entries, expected {}", target.len(), model.nx()));
            }
        }
        Ok(())
    }

    pub fn problem(&self) -> Result<ShootingProblem, ScenarioError> {
        let build = |e: &dyn std::fmt::Display| ScenarioError::Build(e.to_string());
        let model = self.model()?;
        let x0 = DVector::from_column_slice(&self.x0);
        let phases = self.phases();

        let dynamics_for = |p: &Phase| -> Result<(Arc<dyn Dynamics>, Vec<Contact>), ScenarioError> {
            match &model {
                CatalogueModel::Linear(l) => Ok((l.clone() as Arc<dyn Dynamics>, vec![])),
                CatalogueModel::Mechanical(system) => {
                    let q0 = x0.rows(0, system.config_space().nx()).into_owned();
                    let contacts: Vec<Contact> = p
                        .contacts
                        .iter()
                        .map(|c| {
                            let frame = system.frame_index(&c.frame).expect("validated");
                            let reference = match &c.reference {
                                Some(r) => DVector::from_column_slice(r),
                                None => system.frame_position(&q0, frame),
                            };
                            Contact::new(&c.frame, reference).with_gains(c.alpha, c.beta)
                        })
                        .collect();
                    let dynamics = MultibodyDynamics::new(system.clone(), contacts.clone()).map_err(|e| build(&e))?;
                    Ok((Arc::new(dynamics), contacts))
                }
            }
        };

        let impulse_costs: Vec<CostTerm> = self
            .running_costs
            .iter()
            .filter(|c| !matches!(c, CostTerm::ControlRegularization { .. }))
            .cloned()
            .collect();
        let mut running: Vec<Arc<dyn ActionModel>> = Vec::with_capacity(self.horizon);
        let mut last_dynamics = None;
        for p in &phases {
            let (dynamics, contacts) = dynamics_for(p)?;
            let mut cache: HashMap<u64, Arc<dyn ActionModel>> = HashMap::new();
            for k in p.start..p.end {
                if let Some(s) = self.switches.iter().find(|s| s.node == k) {
                    let system = model.system().expect("validated").clone();
                    let impulse = ImpulseModel::new(system, &contacts, s.restitution, &impulse_costs).map_err(|e| build(&e))?;
                    running.push(Arc::new(impulse));
                    continue;
                }
                let dt = self.dt.at(k);
                let node = match cache.get(&dt.to_bits()) {
                    Some(m) => m.clone(),
                    None => {
                        let m: Arc<dyn ActionModel> = Arc::new(
                            IntegratedActionModel::new(dynamics.clone(), &self.running_costs, dt).map_err(|e| build(&e))?,
                        );
                        cache.insert(dt.to_bits(), m.clone());
                        m
                    }
                };
                running.push(node);
            }
            last_dynamics = Some(dynamics);
        }
        let last = last_dynamics.expect("at least one phase");
        let terminal = TerminalModel::for_dynamics(last.as_ref(), &self.terminal_costs).map_err(|e| build(&e))?;
        ShootingProblem::new(x0, running, Arc::new(terminal)).map_err(|e| build(&e))
    }

    /// Initial `(xs, us)` according to the warm-start policy.
    pub fn warm_start(&self, problem: &ShootingProblem) -> Result<(Vec<DVector<f64>>, Vec<DVector<f64>>), ScenarioError> {
        let build = |e: &dyn std::fmt::Display| ScenarioError::Build(e.to_string());
        let n = problem.horizon();
        let x0 = problem.x0();
        let zeros = || problem.running().iter().map(|m| DVector::zeros(m.nu())).collect::<Vec<_>>();
        match &self.warm_start {
            WarmStart::Zeros => Ok((vec![x0.clone(); n + 1], zeros())),
            WarmStart::QuasiStaticInterpolation { target } => {
                let space = problem.state();
                let step = match target {
                    Some(t) => space.difference(x0, &DVector::from_column_slice(t)).map_err(|e| build(&e))?,
                    None => DVector::zeros(space.ndx()),
                };
                let xs = (0..=n)
                    .map(|k| space.integrate(x0, &(&step * (k as f64 / n as f64))))
                    .collect::<Result<Vec<_>, _>>()
                    .map_err(|e| build(&e))?;
                let us = problem.quasi_static(&xs).map_err(|e| build(&e))?;
                Ok((xs, us))
            }
            WarmStart::File { path } => {
                let path = self.base_dir.join(path);
                let (xs, us) = solution::read_solution(&path).map_err(|e| build(&e))?;
                problem.check_trajectory(&xs, &us).map_err(|e| build(&e))?;
                Ok((xs, us))
            }
        }
    }

    pub fn build(&self) -> Result<Built, ScenarioError> {
        let problem = self.problem()?;
        let (xs, us) = self.warm_start(&problem)?;
        Ok(Built { problem, xs, us })
    }
}
