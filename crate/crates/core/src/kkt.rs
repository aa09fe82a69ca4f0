//! Dense Newton step on the multiple-shooting KKT system, used as an oracle
//! for the Riccati-based solvers on small problems.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::problem::{ProblemError, ShootingProblem};

/// Largest number of primal unknowns assembled densely.
pub const MAX_DENSE_SIZE: usize = 2000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum KktError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("problem has {0} primal unknowns, the dense oracle allows {MAX_DENSE_SIZE}")]
    TooLarge(usize),
    #[error("KKT matrix is singular")]
    Singular,
}

/// Newton direction in tangent coordinates, with one multiplier per
/// dynamics constraint (the first one for the initial state).
#[derive(Debug, Clone)]
pub struct KktDirection {
    pub dxs: Vec<DVector<f64>>,
    pub dus: Vec<DVector<f64>>,
    pub multipliers: Vec<DVector<f64>>,
}

/// Assembled system `[H Cᵀ; C 0]·[δz; λ] = [−g; f̄]`.
#[derive(Debug, Clone)]
pub struct KktSystem {
    pub matrix: DMatrix<f64>,
    pub rhs: DVector<f64>,
    pub x_offsets: Vec<usize>,
    pub u_offsets: Vec<usize>,
    pub primal: usize,
}

pub fn assemble_kkt(problem: &ShootingProblem, xs: &[DVector<f64>], us: &[DVector<f64>]) -> Result<KktSystem, KktError> {
    let n = problem.horizon();
    let ndx = problem.state().ndx();
    let mut data = problem.create_data();
    problem.calc_diff(&mut data, xs, us, None)?;
    let gaps = problem.gaps(&data, xs)?;

    let mut x_offsets = Vec::with_capacity(n + 1);
    let mut u_offsets = Vec::with_capacity(n);
    let mut offset = 0;
    for k in 0..=n {
        x_offsets.push(offset);
        offset += ndx;
        if k < n {
            u_offsets.push(offset);
            offset += problem.model(k).nu();
        }
    }
    let primal = offset;
    if primal > MAX_DENSE_SIZE {
        return Err(KktError::TooLarge(primal));
    }
    let dual = (n + 1) * ndx;
    let size = primal + dual;
    let mut matrix = DMatrix::zeros(size, size);
    let mut rhs = DVector::zeros(size);

    for k in 0..=n {
        let d = &data.nodes[k];
        let (ix, nu) = (x_offsets[k], d.lu.len());
        matrix.view_mut((ix, ix), (ndx, ndx)).copy_from(&d.lxx);
        rhs.rows_mut(ix, ndx).copy_from(&(-&d.lx));
        if k < n {
            let iu = u_offsets[k];
            matrix.view_mut((ix, iu), (ndx, nu)).copy_from(&d.lxu);
            matrix.view_mut((iu, ix), (nu, ndx)).copy_from(&d.lxu.transpose());
            matrix.view_mut((iu, iu), (nu, nu)).copy_from(&d.luu);
            rhs.rows_mut(iu, nu).copy_from(&(-&d.lu));
        }
    }

    // constraint rows: δx₀ = f̄₀ and δxₖ₊₁ − f_x·δxₖ − f_u·δuₖ = f̄ₖ₊₁
    let mut put = |r: usize, c: usize, block: &DMatrix<f64>| {
        matrix.view_mut((r, c), block.shape()).copy_from(block);
        matrix.view_mut((c, r), (block.ncols(), block.nrows())).copy_from(&block.transpose());
    };
    let eye = DMatrix::identity(ndx, ndx);
    for k in 0..=n {
        let row = primal + k * ndx;
        put(row, x_offsets[k], &eye);
        if k > 0 {
            let d = &data.nodes[k - 1];
            put(row, x_offsets[k - 1], &(-&d.fx));
            put(row, u_offsets[k - 1], &(-&d.fu));
        }
        rhs.rows_mut(row, ndx).copy_from(&gaps[k]);
    }
    Ok(KktSystem { matrix, rhs, x_offsets, u_offsets, primal })
}

pub fn kkt_search_direction(problem: &ShootingProblem, xs: &[DVector<f64>], us: &[DVector<f64>]) -> Result<KktDirection, KktError> {
    let system = assemble_kkt(problem, xs, us)?;
    let lu = system.matrix.clone().lu();
    let sol = lu.solve(&system.rhs).ok_or(KktError::Singular)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(KktError::Singular);
    }
    let ndx = problem.state().ndx();
    let n = problem.horizon();
    let dxs = system.x_offsets.iter().map(|&i| sol.rows(i, ndx).into_owned()).collect();
    let dus = (0..n).map(|k| sol.rows(system.u_offsets[k], problem.model(k).nu()).into_owned()).collect();
    let multipliers = (0..=n).map(|k| sol.rows(system.primal + k * ndx, ndx).into_owned()).collect();
    Ok(KktDirection { dxs, dus, multipliers })
}
