//! Shooting-node action models: a discrete step of the dynamics plus a cost.
//!
//! Models are immutable; everything they compute goes into an [`ActionData`]
//! owned by the caller, so one model can be evaluated on many containers at
//! once.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::contact::{impulse_dynamics, impulse_dynamics_derivatives, Contact, ContactError};
use crate::dynamics::{resolve_contacts, stack_rows, Dynamics, DynamicsError};
use crate::manifold::{Manifold, ManifoldError};
use crate::multibody::Multibody;
use crate::numdiff::{tangent_jacobian, vector_jacobian};

/// Residual norm below which a quasi-static control counts as found.
pub const QUASI_STATIC_TOLERANCE: f64 = 1e-6;
pub const QUASI_STATIC_MAX_ITERS: usize = 100;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ActionError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error(transparent)]
    Contact(#[from] ContactError),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("{0}")]
    Invalid(String),
    #[error("quasi-static control did not converge (residual {residual:.3e})")]
    QuasiStatic { residual: f64, best: DVector<f64> },
}

/// One weighted least-squares cost term, `½·weight·Σ wᵢ·rᵢ²`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CostTerm {
    /// Residual `x ⊖ reference`, optionally weighted per tangent coordinate.
    StateRegularization {
        weight: f64,
        reference: Vec<f64>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        weights: Option<Vec<f64>>,
    },
    /// Residual `u − reference`; the reference defaults to zero.
    ControlRegularization {
        weight: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reference: Option<Vec<f64>>,
    },
    FrameTranslationTracking { weight: f64, frame: String, target: Vec<f64> },
    ComTracking { weight: f64, target: Vec<f64> },
}

impl CostTerm {
    pub fn weight(&self) -> f64 {
        match self {
            CostTerm::StateRegularization { weight, .. }
            | CostTerm::ControlRegularization { weight, .. }
            | CostTerm::FrameTranslationTracking { weight, .. }
            | CostTerm::ComTracking { weight, .. } => *weight,
        }
    }
}

#[derive(Debug, Clone)]
enum Residual {
    State { reference: DVector<f64>, weights: DVector<f64> },
    Control { reference: DVector<f64> },
    Frame { frame: usize, target: DVector<f64> },
    Com { target: DVector<f64> },
}

/// A resolved sum of cost terms over the state `x = (q, v)` and control `u`.
#[derive(Debug, Clone)]
pub struct CostModel {
    terms: Vec<(f64, Residual)>,
    state: Manifold,
    nq: usize,
    nqd: usize,
    nu: usize,
    system: Option<Arc<dyn Multibody>>,
}

/// Cost value with Gauss-Newton derivatives.
#[derive(Debug, Clone)]
pub struct CostDerivatives {
    pub cost: f64,
    pub lx: DVector<f64>,
    pub lu: DVector<f64>,
    pub lxx: DMatrix<f64>,
    pub lxu: DMatrix<f64>,
    pub luu: DMatrix<f64>,
}

impl CostModel {
    /// Costs over the state `(q, v)` with `q` on `config` and `v` in `R^nv`.
    pub fn new(
        terms: &[CostTerm],
        config: &Manifold,
        nv: usize,
        nu: usize,
        system: Option<&Arc<dyn Multibody>>,
    ) -> Result<Self, ActionError> {
        let state = &state_space(config, nv);
        let invalid = |msg: String| Err(ActionError::Invalid(msg));
        let mut resolved = Vec::with_capacity(terms.len());
        for term in terms {
            let weight = term.weight();
            if !(weight >= 0.0 && weight.is_finite()) {
                return invalid(format!("cost weight {weight} must be finite and nonnegative"));
            }
            let residual = match term {
                CostTerm::StateRegularization { reference, weights, .. } => {
                    let reference = DVector::from_column_slice(reference);
                    state.check_point(&reference)?;
                    if !state.is_normalized(&reference, 1e-9) {
                        return invalid("state regularization reference is not on the state manifold".into());
                    }
                    let weights = match weights {
                        Some(w) if w.len() != state.ndx() => {
                            return invalid(format!("state weights have {} entries, expected {}", w.len(), state.ndx()))
                        }
                        Some(w) if w.iter().any(|w| !(*w >= 0.0)) => {
                            return invalid("state weights must be nonnegative".into())
                        }
                        Some(w) => DVector::from_column_slice(w),
                        None => DVector::from_element(state.ndx(), 1.0),
                    };
                    Residual::State { reference, weights }
                }
                CostTerm::ControlRegularization { reference, .. } => {
                    let reference = reference.as_ref().map_or(DVector::zeros(nu), |r| DVector::from_column_slice(r));
                    if reference.len() != nu {
                        return invalid(format!("control reference has {} entries, expected {nu}", reference.len()));
                    }
                    Residual::Control { reference }
                }
                CostTerm::FrameTranslationTracking { frame, target, .. } => {
                    let sys = system.ok_or_else(|| ActionError::Invalid(format!("frame `{frame}` needs a multibody model")))?;
                    let index = sys.frame_index(frame).ok_or_else(|| DynamicsError::UnknownFrame(frame.clone()))?;
                    if target.len() != sys.workspace_dim() {
                        return invalid(format!("frame target has {} entries, expected {}", target.len(), sys.workspace_dim()));
                    }
                    Residual::Frame { frame: index, target: DVector::from_column_slice(target) }
                }
                CostTerm::ComTracking { target, .. } => {
                    let sys = system.ok_or_else(|| ActionError::Invalid("CoM tracking needs a multibody model".into()))?;
                    if target.len() != sys.workspace_dim() {
                        return invalid(format!("CoM target has {} entries, expected {}", target.len(), sys.workspace_dim()));
                    }
                    Residual::Com { target: DVector::from_column_slice(target) }
                }
            };
            resolved.push((weight, residual));
        }
        Ok(CostModel {
            terms: resolved,
            state: state.clone(),
            nq: config.nx(),
            nqd: config.ndx(),
            nu,
            system: system.cloned(),
        })
    }

    fn system(&self) -> &dyn Multibody {
        self.system.as_deref().expect("checked when the cost model was built")
    }

    pub fn calc(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<f64, ActionError> {
        let q = x.rows(0, self.nq).into_owned();
        let mut cost = 0.0;
        for (w, residual) in &self.terms {
            cost += 0.5
                * w
                * match residual {
                    Residual::State { reference, weights } => {
                        let r = self.state.difference(reference, x)?;
                        r.component_mul(&r).dot(weights)
                    }
                    Residual::Control { reference } => (u - reference).norm_squared(),
                    Residual::Frame { frame, target } => (self.system().frame_position(&q, *frame) - target).norm_squared(),
                    Residual::Com { target } => (self.system().com(&q) - target).norm_squared(),
                };
        }
        Ok(cost)
    }

    pub fn calc_diff(&self, x: &DVector<f64>, u: &DVector<f64>) -> Result<CostDerivatives, ActionError> {
        let ndx = self.state.ndx();
        let nu = self.nu;
        let q = x.rows(0, self.nq).into_owned();
        let mut d = CostDerivatives {
            cost: 0.0,
            lx: DVector::zeros(ndx),
            lu: DVector::zeros(nu),
            lxx: DMatrix::zeros(ndx, ndx),
            lxu: DMatrix::zeros(ndx, nu),
            luu: DMatrix::zeros(nu, nu),
        };
        for (w, residual) in &self.terms {
            match residual {
                Residual::State { reference, weights } => {
                    let r = self.state.difference(reference, x)?;
                    let (_, jac) = self.state.jdifference(reference, x)?;
                    let wr = r.component_mul(weights) * *w;
                    d.cost += 0.5 * r.dot(&wr);
                    d.lx += jac.tr_mul(&wr);
                    let wj = DMatrix::from_diagonal(&(weights * *w)) * &jac;
                    d.lxx += jac.tr_mul(&wj);
                }
                Residual::Control { reference } => {
                    let r = u - reference;
                    d.cost += 0.5 * w * r.norm_squared();
                    d.lu += &r * *w;
                    for i in 0..nu {
                        d.luu[(i, i)] += w;
                    }
                }
                Residual::Frame { .. } | Residual::Com { .. } => {
                    let (r, jq) = match residual {
                        Residual::Frame { frame, target } => (
                            self.system().frame_position(&q, *frame) - target,
                            self.system().frame_jacobian(&q, *frame),
                        ),
                        Residual::Com { target } => (self.system().com(&q) - target, self.system().com_jacobian(&q)),
                        _ => unreachable!(),
                    };
                    let nqd = self.nqd;
                    d.cost += 0.5 * w * r.norm_squared();
                    let g = jq.tr_mul(&r) * *w;
                    let mut seg = d.lx.rows_mut(0, nqd);
                    seg += &g;
                    let h = jq.tr_mul(&jq) * *w;
                    let mut block = d.lxx.view_mut((0, 0), (nqd, nqd));
                    block += &h;
                }
            }
        }
        Ok(d)
    }
}

/// Everything computed at one node.
#[derive(Debug, Clone)]
pub struct ActionData {
    pub xnext: DVector<f64>,
    pub cost: f64,
    pub fx: DMatrix<f64>,
    pub fu: DMatrix<f64>,
    pub lx: DVector<f64>,
    pub lu: DVector<f64>,
    pub lxx: DMatrix<f64>,
    pub lxu: DMatrix<f64>,
    pub luu: DMatrix<f64>,
}

impl ActionData {
    pub fn new(nx: usize, ndx: usize, nu: usize) -> Self {
        ActionData {
            xnext: DVector::zeros(nx),
            cost: 0.0,
            fx: DMatrix::zeros(ndx, ndx),
            fu: DMatrix::zeros(ndx, nu),
            lx: DVector::zeros(ndx),
            lu: DVector::zeros(nu),
            lxx: DMatrix::zeros(ndx, ndx),
            lxu: DMatrix::zeros(ndx, nu),
            luu: DMatrix::zeros(nu, nu),
        }
    }

    fn set_costs(&mut self, d: CostDerivatives, scale: f64) {
        self.cost = d.cost * scale;
        self.lx = d.lx * scale;
        self.lu = d.lu * scale;
        self.lxx = d.lxx * scale;
        self.lxu = d.lxu * scale;
        self.luu = d.luu * scale;
    }
}

pub trait ActionModel: Send + Sync + Debug {
    fn state(&self) -> &Manifold;

    fn nu(&self) -> usize;

    /// Time advanced by the node, zero for terminal and impulse nodes.
    fn dt(&self) -> f64 {
        0.0
    }

    fn create_data(&self) -> ActionData {
        ActionData::new(self.state().nx(), self.state().ndx(), self.nu())
    }

    /// Fills `xnext` and `cost`.
    fn calc(&self, data: &mut ActionData, x: &DVector<f64>, u: &DVector<f64>) -> Result<(), ActionError>;

    /// Fills every field of `data`.
    fn calc_diff(&self, data: &mut ActionData, x: &DVector<f64>, u: &DVector<f64>) -> Result<(), ActionError>;

    /// Control holding the state still at zero velocity.
    fn quasi_static(&self, _x: &DVector<f64>) -> Result<DVector<f64>, ActionError> {
        Ok(DVector::zeros(self.nu()))
    }
}

fn check_inputs(model: &dyn ActionModel, x: &DVector<f64>, u: &DVector<f64>) -> Result<(), ActionError> {
    model.state().check_point(x)?;
    if u.len() != model.nu() {
        return Err(ActionError::Invalid(format!("control has {} entries, expected {}", u.len(), model.nu())));
    }
    Ok(())
}

fn state_space(config: &Manifold, nv: usize) -> Manifold {
    Manifold::product(&[config, &Manifold::vector(nv)])
}

/// A continuous-time model discretized with one semi-implicit Euler step:
/// `v⁺ = v + v̇·Δt`, `q⁺ = q ⊕ v⁺·Δt`, with running cost `ℓ·Δt`.
#[derive(Debug, Clone)]
pub struct IntegratedActionModel {
    dynamics: Arc<dyn Dynamics>,
    costs: CostModel,
    dt: f64,
    state: Manifold,
}

impl IntegratedActionModel {
    pub fn new(dynamics: Arc<dyn Dynamics>, costs: &[CostTerm], dt: f64) -> Result<Self, ActionError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(ActionError::Invalid(format!("step size {dt} must be positive")));
        }
        let config = dynamics.config_space();
        let state = state_space(config, dynamics.nv());
        let costs = CostModel::new(costs, config, dynamics.nv(), dynamics.nu(), dynamics.multibody())?;
        Ok(IntegratedActionModel { dynamics, costs, dt, state })
    }

    pub fn dynamics(&self) -> &Arc<dyn Dynamics> {
        &self.dynamics
    }

    fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let nq = self.dynamics.config_space().nx();
        (x.rows(0, nq).into_owned(), x.rows(nq, self.dynamics.nv()).into_owned())
    }

    fn step(&self, q: &DVector<f64>, v: &DVector<f64>, a: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>), ActionError> {
        if a.iter().any(|a| !a.is_finite()) {
            return Err(ActionError::NonFinite("acceleration"));
        }
        let v_next = v + a * self.dt;
        let config = self.dynamics.config_space();
        if config.ndx() == 0 {
            // first-order system, the velocity is the whole state
            return Ok((q.clone(), v_next));
        }
        let q_next = config.integrate(q, &(&v_next * self.dt))?;
        Ok((q_next, v_next))
    }
}

fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

impl ActionModel for IntegratedActionModel {
    fn state(&self) -> &Manifold {
        &self.state
    }

    fn nu(&self) -> usize {
        self.dynamics.nu()
    }

    fn dt(&self) -> f64 {
        self.dt
    }

    fn calc(&self, data: &mut ActionData, x: &DVector<f64>, u: &DVector<f64>) -> Result<(), ActionError> {
        check_inputs(self, x, u)?;
        let (q, v) = self.split(x);
        let a = self.dynamics.acceleration(&q, &v, u)?;
        let (q_next, v_next) = self.step(&q, &v, &a)?;
        data.xnext = concat(&q_next, &v_next);
        data.cost = self.costs.calc(x, u)? * self.dt;
        Ok(())
    }

    fn calc_diff(&self, data: &mut ActionData, x: &DVector<f64>, u: &DVector<f64>) -> Result<(), ActionError> {
        check_inputs(self, x, u)?;
        let (q, v) = self.split(x);
        let nv = self.dynamics.nv();
        let nu = self.dynamics.nu();
        let nqd = self.dynamics.config_space().ndx();
        let dt = self.dt;
        let ad = self.dynamics.acceleration_derivatives(&q, &v, u)?;
        let (q_next, v_next) = self.step(&q, &v, &ad.a)?;

        // ∂v⁺/∂(q, v, u)
        let dv_dq = &ad.a_q * dt;
        let dv_dv = DMatrix::identity(nv, nv) + &ad.a_v * dt;
        let dv_du = &ad.a_u * dt;

        let mut fx = DMatrix::zeros(nqd + nv, nqd + nv);
        let mut fu = DMatrix::zeros(nqd + nv, nu);
        if nqd > 0 {
            let (jq, jdq) = self.dynamics.config_space().jintegrate(&q, &(&v_next * dt))?;
            fx.view_mut((0, 0), (nqd, nqd)).copy_from(&(jq + &jdq * &dv_dq * dt));
            fx.view_mut((0, nqd), (nqd, nv)).copy_from(&(&jdq * &dv_dv * dt));
            fu.view_mut((0, 0), (nqd, nu)).copy_from(&(&jdq * &dv_du * dt));
        }
        fx.view_mut((nqd, 0), (nv, nqd)).copy_from(&dv_dq);
        fx.view_mut((nqd, nqd), (nv, nv)).copy_from(&dv_dv);
        fu.view_mut((nqd, 0), (nv, nu)).copy_from(&dv_du);

        data.xnext = concat(&q_next, &v_next);
        data.fx = fx;
        data.fu = fu;
        data.set_costs(self.costs.calc_diff(x, u)?, dt);
        Ok(())
    }

    /// Gauss-Newton iterations on `v̇(q, 0, u) = 0`.
    fn quasi_static(&self, x: &DVector<f64>) -> Result<DVector<f64>, ActionError> {
        self.state.check_point(x)?;
        let (q, _) = self.split(x);
        let v = DVector::zeros(self.dynamics.nv());
        let mut u = DVector::zeros(self.nu());
        let mut best = (f64::INFINITY, u.clone());
        for _ in 0..QUASI_STATIC_MAX_ITERS {
            let d = self.dynamics.acceleration_derivatives(&q, &v, &u)?;
            let residual = d.a.norm();
            if !residual.is_finite() {
                return Err(ActionError::NonFinite("acceleration"));
            }
            if residual < best.0 {
                best = (residual, u.clone());
            }
            if residual <= QUASI_STATIC_TOLERANCE {
                return Ok(u);
            }
            let step = d
                .a_u
                .clone()
                .svd(true, true)
                .solve(&(-&d.a), 1e-12)
                .map_err(|e| ActionError::Invalid(e.to_string()))?;
            if step.norm() <= 1e-14 * (1.0 + u.norm()) {
                break;
            }
            u += step;
        }
        Err(ActionError::QuasiStatic { residual: best.0, best: best.1 })
    }
}

/// Cost-only model closing the horizon; `xnext = x`.
#[derive(Debug, Clone)]
pub struct TerminalModel {
    costs: CostModel,
    state: Manifold,
}

impl TerminalModel {
    pub fn new(config: &Manifold, nv: usize, costs: &[CostTerm], system: Option<&Arc<dyn Multibody>>) -> Result<Self, ActionError> {
        let state = state_space(config, nv);
        let costs = CostModel::new(costs, config, nv, 0, system)?;
        Ok(TerminalModel { costs, state })
    }

    /// Terminal model sharing the configuration space of `dynamics`.
    pub fn for_dynamics(dynamics: &dyn Dynamics, costs: &[CostTerm]) -> Result<Self, ActionError> {
        Self::new(dynamics.config_space(), dynamics.nv(), costs, dynamics.multibody())
    }
}

impl ActionModel for TerminalModel {
    fn state(&self) -> &Manifold {
        &self.state
    }

    fn nu(&self) -> usize {
        0
    }

    fn calc(&self, data: &mut ActionData, x: &DVector<f64>, u: &DVector<f64>) -> Result<(), ActionError> {
        check_inputs(self, x, u)?;
        data.xnext = x.clone();
        data.cost = self.costs.calc(x, u)?;
        Ok(())
    }

    fn calc_diff(&self, data: &mut ActionData, x: &DVector<f64>, u: &DVector<f64>) -> Result<(), ActionError> {
        check_inputs(self, x, u)?;
        data.xnext = x.clone();
        data.fx = DMatrix::identity(self.state.ndx(), self.state.ndx());
        data.fu = DMatrix::zeros(self.state.ndx(), 0);
        data.set_costs(self.costs.calc_diff(x, u)?, 1.0);
        Ok(())
    }
}

/// Instantaneous contact gain: `x⁺ = (q, v⁺)` with `v⁺` from the impulse
/// dynamics. Takes no control and advances no time.
#[derive(Debug, Clone)]
pub struct ImpulseModel {
    system: Arc<dyn Multibody>,
    frames: Vec<usize>,
    restitution: f64,
    costs: CostModel,
    state: Manifold,
}

impl ImpulseModel {
    /// Only the frame names of `contacts` matter here.
    pub fn new(system: Arc<dyn Multibody>, contacts: &[Contact], restitution: f64, costs: &[CostTerm]) -> Result<Self, ActionError> {
        if !(0.0..=1.0).contains(&restitution) {
            return Err(ContactError::Restitution(restitution).into());
        }
        let frames = resolve_contacts(system.as_ref(), contacts)?;
        let state = state_space(system.config_space(), system.nv());
        let costs = CostModel::new(costs, system.config_space(), system.nv(), 0, Some(&system))?;
        Ok(ImpulseModel { system, frames, restitution, costs, state })
    }

    fn split(&self, x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let nq = self.system.config_space().nx();
        (x.rows(0, nq).into_owned(), x.rows(nq, self.system.nv()).into_owned())
    }

    fn jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        stack_rows(self.frames.iter().map(|&f| self.system.frame_jacobian(q, f)).collect(), self.system.nv())
    }
}

impl ActionModel for ImpulseModel {
    fn state(&self) -> &Manifold {
        &self.state
    }

    fn nu(&self) -> usize {
        0
    }

    fn calc(&self, data: &mut ActionData, x: &DVector<f64>, u: &DVector<f64>) -> Result<(), ActionError> {
        check_inputs(self, x, u)?;
        let (q, v) = self.split(x);
        let res = impulse_dynamics(&self.system.mass_matrix(&q), &self.jacobian(&q), &v, self.restitution)?;
        if res.v_plus.iter().any(|v| !v.is_finite()) {
            return Err(ActionError::NonFinite("post-impact velocity"));
        }
        data.xnext = concat(&q, &res.v_plus);
        data.cost = self.costs.calc(x, u)?;
        Ok(())
    }

    fn calc_diff(&self, data: &mut ActionData, x: &DVector<f64>, u: &DVector<f64>) -> Result<(), ActionError> {
        check_inputs(self, x, u)?;
        let (q, v) = self.split(x);
        let sys = &self.system;
        let nv = sys.nv();
        let res = impulse_dynamics(&sys.mass_matrix(&q), &self.jacobian(&q), &v, self.restitution)?;

        // configuration partials of the residuals M(q)(v⁺ − v⁻) − Jcᵀ(q)Λ and Jc(q)(v⁺ + e·v⁻)
        let zero = DVector::zeros(nv);
        let dv = &res.v_plus - &v;
        let mut r1 = sys.rnea_partials(&q, &zero, &dv).0 - sys.rnea_partials(&q, &zero, &zero).0;
        let target = &res.v_plus + &v * self.restitution;
        let mut r2 = Vec::with_capacity(self.frames.len());
        let mut row = 0;
        for &f in &self.frames {
            let n = sys.workspace_dim();
            r1 -= sys.jacobian_transpose_partial(&q, f, &res.impulse.rows(row, n).into_owned());
            r2.push(sys.frame_acceleration_partials(&q, &zero, &target, f).0);
            row += n;
        }
        let r2 = stack_rows(r2, nv);
        let d = impulse_dynamics_derivatives(&res, Some((&r1, &r2)))?;

        let mut fx = DMatrix::identity(2 * nv, 2 * nv);
        fx.view_mut((nv, 0), (nv, nv)).copy_from(&d.dvplus_dq);
        fx.view_mut((nv, nv), (nv, nv)).copy_from(&d.dvplus_dvminus);
        data.xnext = concat(&q, &res.v_plus);
        data.fx = fx;
        data.fu = DMatrix::zeros(2 * nv, 0);
        data.set_costs(self.costs.calc_diff(x, u)?, 1.0);
        Ok(())
    }
}

/// Control that keeps `x` at rest, see [`ActionModel::quasi_static`].
pub fn quasi_static_control(model: &dyn ActionModel, x: &DVector<f64>) -> Result<DVector<f64>, ActionError> {
    model.quasi_static(x)
}

/// `f_x`, `f_u`, `l_x` and `l_u` by central differences; the remaining
/// fields are copied from an analytic evaluation.
pub fn finite_difference_derivatives(
    model: &dyn ActionModel,
    x: &DVector<f64>,
    u: &DVector<f64>,
) -> Result<ActionData, ActionError> {
    let mut data = model.create_data();
    model.calc_diff(&mut data, x, u)?;
    let space = model.state();
    let xnext = data.xnext.clone();
    let mut failure = None;
    let mut eval = |x: &DVector<f64>, u: &DVector<f64>| -> (DVector<f64>, f64) {
        let mut d = model.create_data();
        match model.calc(&mut d, x, u) {
            Ok(()) => (space.difference(&xnext, &d.xnext).expect("same manifold"), d.cost),
            Err(e) => {
                failure.get_or_insert(e);
                (DVector::zeros(space.ndx()), 0.0)
            }
        }
    };
    data.fx = tangent_jacobian(space, x, |x| eval(x, u).0);
    data.fu = vector_jacobian(u, |u| eval(x, u).0);
    let gradient = |j: DMatrix<f64>| DVector::from_iterator(j.ncols(), j.iter().copied());
    data.lx = gradient(tangent_jacobian(space, x, |x| DVector::from_element(1, eval(x, u).1)));
    data.lu = gradient(vector_jacobian(u, |u| DVector::from_element(1, eval(x, u).1)));
    match failure {
        Some(e) => Err(e),
        None => Ok(data),
    }
}
