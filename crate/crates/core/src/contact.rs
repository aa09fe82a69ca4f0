//! Rigid-contact and impulse dynamics through the contact KKT system
//!
//! ```text
//! [ M   -Jcᵀ ] [ v̇ ]   [ τ_b ]
//! [ Jc   0   ] [ λ  ] = [ -a₀ ]
//! ```
//!
//! solved blockwise with a Cholesky factorization of the joint-space inertia
//! `M` and of the operational-space inertia `M̂ = Jc M⁻¹ Jcᵀ`. The same factors
//! are reused for every derivative right-hand side.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

use crate::manifold::Manifold;

/// Smallest admissible Cholesky pivot of `M̂`.
pub const RANK_THRESHOLD: f64 = 1e-10;
pub const DEFAULT_BAUMGARTE_ALPHA: f64 = 100.0;
pub const DEFAULT_BAUMGARTE_BETA: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ContactError {
    #[error("joint-space inertia is not positive definite")]
    MassNotPositiveDefinite,
    #[error("contact Jacobian is rank deficient: operational-space pivot {pivot:e} below {RANK_THRESHOLD:e}")]
    RankDeficient { pivot: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("restitution coefficient {0} outside [0, 1]")]
    Restitution(f64),
}

/// A point contact on a named frame, stabilized toward a reference placement.
#[derive(Debug, Clone, PartialEq)]
pub struct Contact {
    pub frame: String,
    pub reference: DVector<f64>,
    /// Position gain, 1/s².
    pub alpha: f64,
    /// Velocity gain, 1/s.
    pub beta: f64,
}

impl Contact {
    pub fn new(frame: &str, reference: DVector<f64>) -> Self {
        Contact {
            frame: frame.to_string(),
            reference,
            alpha: DEFAULT_BAUMGARTE_ALPHA,
            beta: DEFAULT_BAUMGARTE_BETA,
        }
    }

    pub fn with_gains(mut self, alpha: f64, beta: f64) -> Self {
        self.alpha = alpha;
        self.beta = beta;
        self
    }

    pub fn dim(&self) -> usize {
        self.reference.len()
    }

    /// Desired constraint-space acceleration
    /// `a₀ = a_drift − α·(reference ⊖ placement) − β·v_frame`.
    ///
    /// Point contacts place the frame in a vector space, so `⊖` is subtraction.
    pub fn baumgarte_a0(
        &self,
        placement: &DVector<f64>,
        frame_velocity: &DVector<f64>,
        drift: &DVector<f64>,
    ) -> Result<DVector<f64>, ContactError> {
        let nf = self.dim();
        for (what, len) in [("placement", placement.len()), ("velocity", frame_velocity.len()), ("drift", drift.len())] {
            if len != nf {
                return Err(ContactError::Dimension(format!("{what} has {len} entries, contact has {nf}")));
            }
        }
        let error = Manifold::vector(nf)
            .difference(placement, &self.reference)
            .map_err(|e| ContactError::Dimension(e.to_string()))?;
        Ok(drift - error * self.alpha - frame_velocity * self.beta)
    }
}

/// Factored contact KKT matrix.
#[derive(Debug, Clone)]
pub struct KktFactorization {
    chol_m: Cholesky<f64, Dyn>,
    chol_mhat: Option<Cholesky<f64, Dyn>>,
    jc: DMatrix<f64>,
    /// `M⁻¹ Jcᵀ`
    minv_jt: DMatrix<f64>,
}

impl KktFactorization {
    pub fn new(mass: &DMatrix<f64>, jc: &DMatrix<f64>) -> Result<Self, ContactError> {
        let nv = mass.nrows();
        if mass.ncols() != nv || jc.ncols() != nv {
            return Err(ContactError::Dimension(format!(
                "M is {}×{}, Jc is {}×{}",
                mass.nrows(),
                mass.ncols(),
                jc.nrows(),
                jc.ncols()
            )));
        }
        let chol_m = mass.clone().cholesky().ok_or(ContactError::MassNotPositiveDefinite)?;
        let minv_jt = chol_m.solve(&jc.transpose());
        let chol_mhat = if jc.nrows() == 0 {
            None
        } else {
            let mhat = jc * &minv_jt;
            let mhat = (&mhat + mhat.transpose()) * 0.5;
            let chol = mhat.cholesky().ok_or(ContactError::RankDeficient { pivot: 0.0 })?;
            let pivot = chol.l_dirty().diagonal().iter().map(|d| d * d).fold(f64::INFINITY, f64::min);
            if pivot < RANK_THRESHOLD {
                return Err(ContactError::RankDeficient { pivot });
            }
            Some(chol)
        };
        Ok(KktFactorization { chol_m, chol_mhat, jc: jc.clone(), minv_jt })
    }

    pub fn nv(&self) -> usize {
        self.jc.ncols()
    }

    pub fn nf(&self) -> usize {
        self.jc.nrows()
    }

    /// Operational-space inertia `M̂`.
    pub fn operational_inertia(&self) -> DMatrix<f64> {
        &self.jc * &self.minv_jt
    }

    /// Solves `M·x − Jcᵀ·y = top`, `Jc·x = bottom` for any number of columns.
    pub fn solve(&self, top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let minv_top = self.chol_m.solve(top);
        match &self.chol_mhat {
            None => (minv_top, DMatrix::zeros(0, top.ncols())),
            Some(chol) => {
                let y = chol.solve(&(bottom - &self.jc * &minv_top));
                let x = minv_top + &self.minv_jt * &y;
                (x, y)
            }
        }
    }

    fn solve_vec(&self, top: &DVector<f64>, bottom: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let (x, y) = self.solve(&DMatrix::from_column_slice(top.len(), 1, top.as_slice()), &DMatrix::from_column_slice(bottom.len(), 1, bottom.as_slice()));
        (x.column(0).into_owned(), y.column(0).into_owned())
    }
}

/// Solution of the contact forward dynamics.
#[derive(Debug, Clone)]
pub struct ContactSolution {
    pub factor: KktFactorization,
    pub vdot: DVector<f64>,
    /// Contact forces, N.
    pub lambda: DVector<f64>,
}

/// Constrained accelerations and forces satisfying `M·v̇ − Jcᵀ·λ = τ_b` and
/// `Jc·v̇ = −a₀`.
pub fn contact_forward_dynamics(
    mass: &DMatrix<f64>,
    jc: &DMatrix<f64>,
    tau_b: &DVector<f64>,
    a0: &DVector<f64>,
) -> Result<ContactSolution, ContactError> {
    let factor = KktFactorization::new(mass, jc)?;
    if tau_b.len() != factor.nv() || a0.len() != factor.nf() {
        return Err(ContactError::Dimension(format!(
            "τ_b has {} entries and a₀ {}, expected {} and {}",
            tau_b.len(),
            a0.len(),
            factor.nv(),
            factor.nf()
        )));
    }
    let (vdot, lambda) = factor.solve_vec(tau_b, &(-a0));
    Ok(ContactSolution { factor, vdot, lambda })
}

/// Jacobians of the constrained acceleration (`y`) and contact forces (`g`).
#[derive(Debug, Clone)]
pub struct ContactDerivatives {
    pub y_x: DMatrix<f64>,
    pub y_u: DMatrix<f64>,
    pub g_x: DMatrix<f64>,
    pub g_u: DMatrix<f64>,
}

/// Chain rule through the contact KKT system.
///
/// `dtau_*` are the partials of the generalized-force residual and `da0_*`
/// those of the constraint-acceleration residual; both must already include
/// the dependence of `M` and `Jc` on the state at the current solution.
pub fn contact_dynamics_derivatives(
    factor: &KktFactorization,
    dtau_dx: &DMatrix<f64>,
    dtau_du: &DMatrix<f64>,
    da0_dx: &DMatrix<f64>,
    da0_du: &DMatrix<f64>,
) -> Result<ContactDerivatives, ContactError> {
    let (nv, nf) = (factor.nv(), factor.nf());
    let (ndx, nu) = (dtau_dx.ncols(), dtau_du.ncols());
    if dtau_dx.nrows() != nv || dtau_du.nrows() != nv || da0_dx.shape() != (nf, ndx) || da0_du.shape() != (nf, nu) {
        return Err(ContactError::Dimension("derivative blocks do not match the KKT system".into()));
    }
    let mut top = DMatrix::zeros(nv, ndx + nu);
    top.columns_mut(0, ndx).copy_from(dtau_dx);
    top.columns_mut(ndx, nu).copy_from(dtau_du);
    let mut bottom = DMatrix::zeros(nf, ndx + nu);
    bottom.columns_mut(0, ndx).copy_from(&(-da0_dx));
    bottom.columns_mut(ndx, nu).copy_from(&(-da0_du));
    let (y, g) = factor.solve(&top, &bottom);
    Ok(ContactDerivatives {
        y_x: y.columns(0, ndx).into_owned(),
        y_u: y.columns(ndx, nu).into_owned(),
        g_x: g.columns(0, ndx).into_owned(),
        g_u: g.columns(ndx, nu).into_owned(),
    })
}

#[derive(Debug, Clone)]
pub struct ImpulseResult {
    pub factor: KktFactorization,
    pub v_plus: DVector<f64>,
    /// Contact impulse, N·s.
    pub impulse: DVector<f64>,
    pub restitution: f64,
}

/// Post-impact velocity from `M·v⁺ − Jcᵀ·Λ = M·v⁻` and `Jc·v⁺ = −e·Jc·v⁻`.
pub fn impulse_dynamics(
    mass: &DMatrix<f64>,
    jc: &DMatrix<f64>,
    v_minus: &DVector<f64>,
    restitution: f64,
) -> Result<ImpulseResult, ContactError> {
    if !(0.0..=1.0).contains(&restitution) {
        return Err(ContactError::Restitution(restitution));
    }
    let factor = KktFactorization::new(mass, jc)?;
    if v_minus.len() != factor.nv() {
        return Err(ContactError::Dimension(format!("v⁻ has {} entries, expected {}", v_minus.len(), factor.nv())));
    }
    // Substituting v⁺ = v⁻ + M⁻¹JcᵀΛ gives M̂·Λ = −(1 + e)·Jc·v⁻.
    let (_, impulse) = factor.solve_vec(&DVector::zeros(factor.nv()), &(jc * v_minus * -(1.0 + restitution)));
    let v_plus = v_minus + &factor.minv_jt * &impulse;
    Ok(ImpulseResult { factor, v_plus, impulse, restitution })
}

#[derive(Debug, Clone)]
pub struct ImpulseDerivatives {
    pub dvplus_dq: DMatrix<f64>,
    pub dvplus_dvminus: DMatrix<f64>,
    pub dimpulse_dq: DMatrix<f64>,
    pub dimpulse_dvminus: DMatrix<f64>,
}

/// Jacobians of the impulse map.
///
/// `residual_dq` holds the configuration partials of the two KKT residual
/// rows `M(q)(v⁺ − v⁻) − Jc(q)ᵀΛ` and `Jc(q)(v⁺ + e·v⁻)` at the current
/// solution; pass `None` when `M` and `Jc` are constant.
pub fn impulse_dynamics_derivatives(
    result: &ImpulseResult,
    residual_dq: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> Result<ImpulseDerivatives, ContactError> {
    let f = &result.factor;
    let (nv, nf) = (f.nv(), f.nf());
    // ∂Λ/∂v⁻ = −(1 + e)·M̂⁻¹·Jc, ∂v⁺/∂v⁻ = I + M⁻¹Jcᵀ·∂Λ/∂v⁻
    let (_, dimpulse_dvminus) = f.solve(&DMatrix::zeros(nv, nv), &(&f.jc * -(1.0 + result.restitution)));
    let dvplus_dvminus = DMatrix::identity(nv, nv) + &f.minv_jt * &dimpulse_dvminus;
    let (dvplus_dq, dimpulse_dq) = match residual_dq {
        None => (DMatrix::zeros(nv, nv), DMatrix::zeros(nf, nv)),
        Some((r1, r2)) => {
            if r1.nrows() != nv || r2.nrows() != nf || r1.ncols() != r2.ncols() {
                return Err(ContactError::Dimension("impulse residual partials do not match the KKT system".into()));
            }
            f.solve(&(-r1), &(-r2))
        }
    };
    Ok(ImpulseDerivatives { dvplus_dq, dvplus_dvminus, dimpulse_dq, dimpulse_dvminus })
}
