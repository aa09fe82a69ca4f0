//! State manifolds and their integrate / difference operators.
//!
//! Every manifold is a product of blocks: Euclidean vectors, planar rotations
//! stored as `(cos, sin)` and spatial rotations stored as unit quaternions
//! `(x, y, z, w)`. Tangent vectors use one coordinate per degree of freedom
//! (an angle for SO(2), an axis-angle vector for SO(3)).
//!
//! All operators use the right convention: perturbations are composed on the
//! right of the base point,
//!
//! ```text
//! integrate(x, dx)   = x · Exp(dx)
//! difference(x0, x1) = Log(x0⁻¹ · x1)
//! ```
//!
//! so that `integrate(x0, difference(x0, x1)) == x1`.

use nalgebra::{DMatrix, DVector, Matrix3, Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifoldError {
    #[error("point has {got} coordinates, manifold expects {expected}")]
    PointDimension { expected: usize, got: usize },
    #[error("tangent vector has {got} coordinates, manifold expects {expected}")]
    TangentDimension { expected: usize, got: usize },
}

/// Serializable description of a state manifold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ManifoldSpec {
    Vector { dim: usize },
    Rotation3d,
    /// R² × SO(2): planar translation and heading, decoupled.
    FreeFlyerPlanar,
    Composite { parts: Vec<ManifoldSpec> },
}

impl ManifoldSpec {
    pub fn nx(&self) -> usize {
        match self {
            ManifoldSpec::Vector { dim } => *dim,
            ManifoldSpec::Rotation3d => 4,
            ManifoldSpec::FreeFlyerPlanar => 4,
            ManifoldSpec::Composite { parts } => parts.iter().map(ManifoldSpec::nx).sum(),
        }
    }

    pub fn ndx(&self) -> usize {
        match self {
            ManifoldSpec::Vector { dim } => *dim,
            ManifoldSpec::Rotation3d => 3,
            ManifoldSpec::FreeFlyerPlanar => 3,
            ManifoldSpec::Composite { parts } => parts.iter().map(ManifoldSpec::ndx).sum(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockKind {
    Euclidean(usize),
    So2,
    So3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    kind: BlockKind,
    ix: usize,
    idx: usize,
}

impl Block {
    fn nx(&self) -> usize {
        match self.kind {
            BlockKind::Euclidean(n) => n,
            BlockKind::So2 => 2,
            BlockKind::So3 => 4,
        }
    }

    fn ndx(&self) -> usize {
        match self.kind {
            BlockKind::Euclidean(n) => n,
            BlockKind::So2 => 1,
            BlockKind::So3 => 3,
        }
    }
}

/// A concrete state manifold built from a [`ManifoldSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Manifold {
    spec: ManifoldSpec,
    blocks: Vec<Block>,
    nx: usize,
    ndx: usize,
}

impl Manifold {
    pub fn new(spec: ManifoldSpec) -> Self {
        let mut kinds = Vec::new();
        flatten(&spec, &mut kinds);
        let mut blocks: Vec<Block> = Vec::new();
        let (mut ix, mut idx) = (0, 0);
        for kind in kinds {
            // adjacent Euclidean parts share one block
            if let (BlockKind::Euclidean(n), Some(last)) = (kind, blocks.last_mut()) {
                if let BlockKind::Euclidean(m) = last.kind {
                    last.kind = BlockKind::Euclidean(m + n);
                    ix += n;
                    idx += n;
                    continue;
                }
            }
            let block = Block { kind, ix, idx };
            ix += block.nx();
            idx += block.ndx();
            if block.nx() > 0 {
                blocks.push(block);
            }
        }
        Manifold { spec, blocks, nx: ix, ndx: idx }
    }

    pub fn vector(dim: usize) -> Self {
        Self::new(ManifoldSpec::Vector { dim })
    }

    pub fn rotation3d() -> Self {
        Self::new(ManifoldSpec::Rotation3d)
    }

    pub fn free_flyer_planar() -> Self {
        Self::new(ManifoldSpec::FreeFlyerPlanar)
    }

    /// Product manifold of the given parts, in order.
    pub fn product(parts: &[&Manifold]) -> Self {
        Self::new(ManifoldSpec::Composite { parts: parts.iter().map(|m| m.spec.clone()).collect() })
    }

    pub fn spec(&self) -> &ManifoldSpec {
        &self.spec
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ndx(&self) -> usize {
        self.ndx
    }

    pub fn is_euclidean(&self) -> bool {
        self.blocks.iter().all(|b| matches!(b.kind, BlockKind::Euclidean(_)))
    }

    /// The identity element: zero vectors, zero angle, identity quaternion.
    pub fn neutral(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.nx);
        for b in &self.blocks {
            match b.kind {
                BlockKind::Euclidean(_) => {}
                BlockKind::So2 => x[b.ix] = 1.0,
                BlockKind::So3 => x[b.ix + 3] = 1.0,
            }
        }
        x
    }

    pub fn check_point(&self, x: &DVector<f64>) -> Result<(), ManifoldError> {
        if x.len() != self.nx {
            return Err(ManifoldError::PointDimension { expected: self.nx, got: x.len() });
        }
        Ok(())
    }

    /// Whether every rotation block of `x` has unit norm within `tol`.
    pub fn is_normalized(&self, x: &DVector<f64>, tol: f64) -> bool {
        x.len() == self.nx
            && self.blocks.iter().all(|b| match b.kind {
                BlockKind::Euclidean(_) => true,
                BlockKind::So2 => (x.rows(b.ix, 2).norm() - 1.0).abs() <= tol,
                BlockKind::So3 => (x.rows(b.ix, 4).norm() - 1.0).abs() <= tol,
            })
    }

    pub fn check_tangent(&self, dx: &DVector<f64>) -> Result<(), ManifoldError> {
        if dx.len() != self.ndx {
            return Err(ManifoldError::TangentDimension { expected: self.ndx, got: dx.len() });
        }
        Ok(())
    }

    /// `x ⊕ dx`.
    pub fn integrate(&self, x: &DVector<f64>, dx: &DVector<f64>) -> Result<DVector<f64>, ManifoldError> {
        self.check_point(x)?;
        self.check_tangent(dx)?;
        let mut out = DVector::zeros(self.nx);
        for b in &self.blocks {
            match b.kind {
                BlockKind::Euclidean(n) => {
                    for i in 0..n {
                        out[b.ix + i] = x[b.ix + i] + dx[b.idx + i];
                    }
                }
                BlockKind::So2 => {
                    let angle = x[b.ix + 1].atan2(x[b.ix]) + dx[b.idx];
                    out[b.ix] = angle.cos();
                    out[b.ix + 1] = angle.sin();
                }
                BlockKind::So3 => {
                    let q = quat_at(x, b.ix);
                    let w = Vector3::new(dx[b.idx], dx[b.idx + 1], dx[b.idx + 2]);
                    let r = UnitQuaternion::new_normalize(q.into_inner() * so3_exp(&w).into_inner());
                    write_quat(&mut out, b.ix, &r);
                }
            }
        }
        Ok(out)
    }

    /// `x1 ⊖ x0`, the tangent vector at `x0` that reaches `x1`.
    pub fn difference(&self, x0: &DVector<f64>, x1: &DVector<f64>) -> Result<DVector<f64>, ManifoldError> {
        self.check_point(x0)?;
        self.check_point(x1)?;
        let mut out = DVector::zeros(self.ndx);
        for b in &self.blocks {
            match b.kind {
                BlockKind::Euclidean(n) => {
                    for i in 0..n {
                        out[b.idx + i] = x1[b.ix + i] - x0[b.ix + i];
                    }
                }
                BlockKind::So2 => {
                    out[b.idx] = so2_log(x0[b.ix], x0[b.ix + 1], x1[b.ix], x1[b.ix + 1]);
                }
                BlockKind::So3 => {
                    let q0 = quat_at(x0, b.ix);
                    let q1 = quat_at(x1, b.ix);
                    let d = so3_log(&(q0.inverse() * q1));
                    out.rows_mut(b.idx, 3).copy_from(&d);
                }
            }
        }
        Ok(out)
    }

    /// Jacobians of `integrate(x, dx)` with respect to a tangent perturbation of
    /// `x` and to `dx`, both expressed in the tangent space at the result.
    pub fn jintegrate(
        &self,
        x: &DVector<f64>,
        dx: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>), ManifoldError> {
        self.check_point(x)?;
        self.check_tangent(dx)?;
        let mut jx = DMatrix::identity(self.ndx, self.ndx);
        let mut jdx = DMatrix::identity(self.ndx, self.ndx);
        for b in &self.blocks {
            if let BlockKind::So3 = b.kind {
                let w = Vector3::new(dx[b.idx], dx[b.idx + 1], dx[b.idx + 2]);
                let rt = so3_exp(&w).to_rotation_matrix().into_inner().transpose();
                jx.view_mut((b.idx, b.idx), (3, 3)).copy_from(&rt);
                jdx.view_mut((b.idx, b.idx), (3, 3)).copy_from(&right_jacobian(&w));
            }
        }
        Ok((jx, jdx))
    }

    /// Jacobians of `difference(x0, x1)` with respect to tangent perturbations
    /// of `x0` and `x1`.
    pub fn jdifference(
        &self,
        x0: &DVector<f64>,
        x1: &DVector<f64>,
    ) -> Result<(DMatrix<f64>, DMatrix<f64>), ManifoldError> {
        self.check_point(x0)?;
        self.check_point(x1)?;
        let mut j0 = -DMatrix::identity(self.ndx, self.ndx);
        let mut j1 = DMatrix::identity(self.ndx, self.ndx);
        for b in &self.blocks {
            if let BlockKind::So3 = b.kind {
                let q0 = quat_at(x0, b.ix);
                let q1 = quat_at(x1, b.ix);
                let rel = q0.inverse() * q1;
                let d = so3_log(&rel);
                let jr_inv = right_jacobian_inverse(&d);
                let rt = rel.to_rotation_matrix().into_inner().transpose();
                j0.view_mut((b.idx, b.idx), (3, 3)).copy_from(&(-jr_inv * rt));
                j1.view_mut((b.idx, b.idx), (3, 3)).copy_from(&jr_inv);
            }
        }
        Ok((j0, j1))
    }
}

fn flatten(spec: &ManifoldSpec, out: &mut Vec<BlockKind>) {
    match spec {
        ManifoldSpec::Vector { dim } => out.push(BlockKind::Euclidean(*dim)),
        ManifoldSpec::Rotation3d => out.push(BlockKind::So3),
        ManifoldSpec::FreeFlyerPlanar => {
            out.push(BlockKind::Euclidean(2));
            out.push(BlockKind::So2);
        }
        ManifoldSpec::Composite { parts } => parts.iter().for_each(|p| flatten(p, out)),
    }
}

fn quat_at(x: &DVector<f64>, i: usize) -> UnitQuaternion<f64> {
    UnitQuaternion::new_normalize(Quaternion::new(x[i + 3], x[i], x[i + 1], x[i + 2]))
}

/// Stores `q` with a nonnegative scalar part, picking one of the two
/// quaternions of each rotation.
fn write_quat(x: &mut DVector<f64>, i: usize, q: &UnitQuaternion<f64>) {
    let c = q.quaternion().coords; // (i, j, k, w)
    let sign = if c[3] < 0.0 { -1.0 } else { 1.0 };
    for k in 0..4 {
        x[i + k] = sign * c[k];
    }
}

/// Principal-branch angle of `(c1, s1)` relative to `(c0, s0)`, in (−π, π].
fn so2_log(c0: f64, s0: f64, c1: f64, s1: f64) -> f64 {
    let angle = (c0 * s1 - s0 * c1).atan2(c0 * c1 + s0 * s1);
    if angle == -std::f64::consts::PI {
        std::f64::consts::PI
    } else {
        angle
    }
}

pub fn hat(w: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// Exponential map from an axis-angle vector to a unit quaternion.
pub fn so3_exp(w: &Vector3<f64>) -> UnitQuaternion<f64> {
    let theta = w.norm();
    let half = 0.5 * theta;
    let k = if theta < 1e-6 { 0.5 - theta * theta / 48.0 } else { half.sin() / theta };
    UnitQuaternion::new_normalize(Quaternion::new(half.cos(), k * w.x, k * w.y, k * w.z))
}

/// Logarithm map, principal branch (angle in [0, π]).
///
/// At an angle of exactly π the axis sign is ambiguous; the axis whose first
/// nonzero coordinate is positive is returned.
pub fn so3_log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    let mut w = q.w;
    let mut v = q.imag();
    if w < 0.0 {
        w = -w;
        v = -v;
    }
    let vn = v.norm();
    if vn < 1e-12 {
        // θ ≈ 2·|v|/w
        return v * (2.0 / w) * (1.0 - vn * vn / (3.0 * w * w));
    }
    let theta = 2.0 * vn.atan2(w);
    let mut axis = v / vn;
    if w == 0.0 {
        if let Some(first) = axis.iter().copied().find(|c| *c != 0.0) {
            if first < 0.0 {
                axis = -axis;
            }
        }
    }
    axis * theta
}

/// Right Jacobian of SO(3).
pub fn right_jacobian(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let (a, b) = if theta < 1e-5 {
        (0.5 - theta2 / 24.0, 1.0 / 6.0 - theta2 / 120.0)
    } else {
        ((1.0 - theta.cos()) / theta2, (theta - theta.sin()) / (theta2 * theta))
    };
    let s = hat(w);
    Matrix3::identity() - s * a + s * s * b
}

/// Inverse of the right Jacobian of SO(3).
pub fn right_jacobian_inverse(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let c = if theta < 1e-5 {
        1.0 / 12.0 + theta2 / 720.0
    } else {
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    let s = hat(w);
    Matrix3::identity() + s * 0.5 + s * s * c
}
