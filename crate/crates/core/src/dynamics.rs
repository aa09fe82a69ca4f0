//! Continuous-time dynamics `v̇ = a(q, v, u)` feeding the integrated action models.

use std::fmt::Debug;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::contact::{contact_dynamics_derivatives, contact_forward_dynamics, Contact, ContactError, ContactSolution};
use crate::manifold::Manifold;
use crate::multibody::Multibody;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DynamicsError {
    #[error(transparent)]
    Contact(#[from] ContactError),
    #[error("unknown frame `{0}`")]
    UnknownFrame(String),
    #[error("{0}")]
    Dimension(String),
}

/// Acceleration and its partials with respect to `q` (tangent), `v` and `u`.
#[derive(Debug, Clone)]
pub struct AccelerationDerivatives {
    pub a: DVector<f64>,
    pub a_q: DMatrix<f64>,
    pub a_v: DMatrix<f64>,
    pub a_u: DMatrix<f64>,
}

pub trait Dynamics: Send + Sync + Debug {
    fn config_space(&self) -> &Manifold;

    fn nv(&self) -> usize;

    fn nu(&self) -> usize;

    fn acceleration(&self, q: &DVector<f64>, v: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, DynamicsError>;

    fn acceleration_derivatives(
        &self,
        q: &DVector<f64>,
        v: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<AccelerationDerivatives, DynamicsError>;

    /// Kinematics used by frame and center-of-mass costs.
    fn multibody(&self) -> Option<&Arc<dyn Multibody>> {
        None
    }
}

/// First-order linear system `ẋ = A·x + B·u + c`.
///
/// The whole state is treated as a velocity with an empty configuration, so
/// one Euler step gives exactly `x⁺ = (I + A·Δt)·x + B·Δt·u + c·Δt`.
#[derive(Debug, Clone)]
pub struct LinearDynamics {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DVector<f64>,
    config: Manifold,
}

impl LinearDynamics {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DVector<f64>) -> Result<Self, DynamicsError> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || c.len() != n {
            return Err(DynamicsError::Dimension(format!(
                "A is {}×{}, B is {}×{}, c has {} entries",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                c.len()
            )));
        }
        Ok(LinearDynamics { a, b, c, config: Manifold::vector(0) })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DVector<f64> {
        &self.c
    }
}

impl Dynamics for LinearDynamics {
    fn config_space(&self) -> &Manifold {
        &self.config
    }

    fn nv(&self) -> usize {
        self.a.nrows()
    }

    fn nu(&self) -> usize {
        self.b.ncols()
    }

    fn acceleration(&self, _q: &DVector<f64>, v: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
        Ok(&self.a * v + &self.b * u + &self.c)
    }

    fn acceleration_derivatives(
        &self,
        q: &DVector<f64>,
        v: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<AccelerationDerivatives, DynamicsError> {
        Ok(AccelerationDerivatives {
            a: self.acceleration(q, v, u)?,
            a_q: DMatrix::zeros(self.nv(), 0),
            a_v: self.a.clone(),
            a_u: self.b.clone(),
        })
    }
}

/// Forward dynamics of a multibody system, optionally constrained by a set of
/// rigid point contacts.
#[derive(Debug, Clone)]
pub struct MultibodyDynamics {
    system: Arc<dyn Multibody>,
    contacts: Vec<Contact>,
    frames: Vec<usize>,
}

impl MultibodyDynamics {
    pub fn new(system: Arc<dyn Multibody>, contacts: Vec<Contact>) -> Result<Self, DynamicsError> {
        let frames = resolve_contacts(system.as_ref(), &contacts)?;
        Ok(MultibodyDynamics { system, contacts, frames })
    }

    pub fn contacts(&self) -> &[Contact] {
        &self.contacts
    }

    pub fn nf(&self) -> usize {
        self.contacts.iter().map(Contact::dim).sum()
    }

    fn stacked_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        stack_rows(self.frames.iter().map(|&f| self.system.frame_jacobian(q, f)).collect(), self.system.nv())
    }

    /// Solves the constrained dynamics, returning the full KKT solution.
    pub fn solve(&self, q: &DVector<f64>, v: &DVector<f64>, u: &DVector<f64>) -> Result<ContactSolution, DynamicsError> {
        self.check(q, v, u)?;
        let sys = &self.system;
        let tau_b = sys.actuation() * u - sys.bias(q, v);
        let jc = self.stacked_jacobian(q);
        let mut a0 = DVector::zeros(self.nf());
        let mut row = 0;
        for (contact, &frame) in self.contacts.iter().zip(&self.frames) {
            let n = contact.dim();
            let jac = sys.frame_jacobian(q, frame);
            let ai = contact.baumgarte_a0(&sys.frame_position(q, frame), &(jac * v), &sys.frame_drift(q, v, frame))?;
            a0.rows_mut(row, n).copy_from(&ai);
            row += n;
        }
        Ok(contact_forward_dynamics(&sys.mass_matrix(q), &jc, &tau_b, &a0)?)
    }

    fn check(&self, q: &DVector<f64>, v: &DVector<f64>, u: &DVector<f64>) -> Result<(), DynamicsError> {
        let sys = &self.system;
        if q.len() != sys.config_space().nx() || v.len() != sys.nv() || u.len() != sys.nu() {
            return Err(DynamicsError::Dimension(format!(
                "got q/v/u of sizes {}/{}/{}, expected {}/{}/{}",
                q.len(),
                v.len(),
                u.len(),
                sys.config_space().nx(),
                sys.nv(),
                sys.nu()
            )));
        }
        Ok(())
    }
}

pub(crate) fn resolve_contacts(system: &dyn Multibody, contacts: &[Contact]) -> Result<Vec<usize>, DynamicsError> {
    contacts
        .iter()
        .map(|c| {
            let f = system.frame_index(&c.frame).ok_or_else(|| DynamicsError::UnknownFrame(c.frame.clone()))?;
            if c.dim() != system.workspace_dim() {
                return Err(DynamicsError::Dimension(format!(
                    "contact on `{}` has a {}-dimensional reference, frames live in {} dimensions",
                    c.frame,
                    c.dim(),
                    system.workspace_dim()
                )));
            }
            Ok(f)
        })
        .collect()
}

pub(crate) fn stack_rows(blocks: Vec<DMatrix<f64>>, ncols: usize) -> DMatrix<f64> {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let mut out = DMatrix::zeros(rows, ncols);
    let mut r = 0;
    for b in blocks {
        out.rows_mut(r, b.nrows()).copy_from(&b);
        r += b.nrows();
    }
    out
}

impl Dynamics for MultibodyDynamics {
    fn config_space(&self) -> &Manifold {
        self.system.config_space()
    }

    fn nv(&self) -> usize {
        self.system.nv()
    }

    fn nu(&self) -> usize {
        self.system.nu()
    }

    fn acceleration(&self, q: &DVector<f64>, v: &DVector<f64>, u: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
        Ok(self.solve(q, v, u)?.vdot)
    }

    fn acceleration_derivatives(
        &self,
        q: &DVector<f64>,
        v: &DVector<f64>,
        u: &DVector<f64>,
    ) -> Result<AccelerationDerivatives, DynamicsError> {
        let sol = self.solve(q, v, u)?;
        let sys = &self.system;
        let nv = sys.nv();
        let ndx = 2 * nv;

        // generalized-force residual: τ_b − M·v̇ + Jcᵀ·λ
        let (id_q, id_v) = sys.rnea_partials(q, v, &sol.vdot);
        let mut dtau_dx = DMatrix::zeros(nv, ndx);
        dtau_dx.columns_mut(0, nv).copy_from(&(-id_q));
        dtau_dx.columns_mut(nv, nv).copy_from(&(-id_v));

        // constraint residual: Jc·v̇ + a₀
        let mut da0_dx = DMatrix::zeros(self.nf(), ndx);
        let zero = DVector::zeros(nv);
        let mut row = 0;
        for (contact, &frame) in self.contacts.iter().zip(&self.frames) {
            let n = contact.dim();
            let force = sol.lambda.rows(row, n).into_owned();
            let jt_q = sys.jacobian_transpose_partial(q, frame, &force);
            let mut block = dtau_dx.columns_mut(0, nv);
            block += &jt_q;

            let jac = sys.frame_jacobian(q, frame);
            let (acc_q, acc_v) = sys.frame_acceleration_partials(q, v, &sol.vdot, frame);
            let (jv_q, _) = sys.frame_acceleration_partials(q, &zero, v, frame);
            let dq = acc_q + &jac * contact.alpha - jv_q * contact.beta;
            let dv = acc_v - &jac * contact.beta;
            da0_dx.view_mut((row, 0), (n, nv)).copy_from(&dq);
            da0_dx.view_mut((row, nv), (n, nv)).copy_from(&dv);
            row += n;
        }
        let d = contact_dynamics_derivatives(
            &sol.factor,
            &dtau_dx,
            &sys.actuation(),
            &da0_dx,
            &DMatrix::zeros(self.nf(), sys.nu()),
        )?;
        Ok(AccelerationDerivatives {
            a: sol.vdot,
            a_q: d.y_x.columns(0, nv).into_owned(),
            a_v: d.y_x.columns(nv, nv).into_owned(),
            a_u: d.y_u,
        })
    }

    fn multibody(&self) -> Option<&Arc<dyn Multibody>> {
        Some(&self.system)
    }
}
