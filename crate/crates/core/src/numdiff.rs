//! Central finite differences over manifold tangent spaces.

use nalgebra::{DMatrix, DVector};

use crate::manifold::Manifold;

/// Step used by every finite-difference routine in the crate.
pub const FD_STEP: f64 = 1e-6;

/// Jacobian of a vector-valued `f` with respect to tangent perturbations of `x`.
pub fn tangent_jacobian<F>(space: &Manifold, x: &DVector<f64>, mut f: F) -> DMatrix<f64>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    let ndx = space.ndx();
    if ndx == 0 {
        return DMatrix::zeros(f(x).len(), 0);
    }
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(ndx);
    for j in 0..ndx {
        let mut dx = DVector::zeros(ndx);
        dx[j] = FD_STEP;
        let plus = f(&space.integrate(x, &dx).expect("dimensions checked by caller"));
        dx[j] = -FD_STEP;
        let minus = f(&space.integrate(x, &dx).expect("dimensions checked by caller"));
        cols.push((plus - minus) / (2.0 * FD_STEP));
    }
    DMatrix::from_columns(&cols)
}

/// Jacobian of a vector-valued `f` with respect to an ordinary vector argument.
pub fn vector_jacobian<F>(x: &DVector<f64>, mut f: F) -> DMatrix<f64>
where
    F: FnMut(&DVector<f64>) -> DVector<f64>,
{
    if x.is_empty() {
        return DMatrix::zeros(f(x).len(), 0);
    }
    let mut cols = Vec::with_capacity(x.len());
    for j in 0..x.len() {
        let mut xp = x.clone();
        xp[j] += FD_STEP;
        let mut xm = x.clone();
        xm[j] -= FD_STEP;
        cols.push((f(&xp) - f(&xm)) / (2.0 * FD_STEP));
    }
    DMatrix::from_columns(&cols)
}
