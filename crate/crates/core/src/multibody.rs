//! Hand-derived mechanical systems.
//!
//! Each system exposes its joint-space inertia, bias forces, actuation map and
//! frame kinematics. Partial derivatives of the inverse dynamics and of frame
//! accelerations default to central differences over the configuration
//! tangent space; the small fixed-base chains override them with closed forms.

use std::fmt::Debug;

use nalgebra::{DMatrix, DVector};

use crate::manifold::Manifold;
use crate::numdiff::{tangent_jacobian, vector_jacobian};

pub const STANDARD_GRAVITY: f64 = 9.81;

pub trait Multibody: Send + Sync + Debug {
    fn name(&self) -> &str;

    fn config_space(&self) -> &Manifold;

    fn nv(&self) -> usize;

    fn nu(&self) -> usize;

    /// Maps controls to generalized forces, `nv × nu`.
    fn actuation(&self) -> DMatrix<f64>;

    fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64>;

    /// Coriolis, centrifugal and gravity forces.
    fn bias(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64>;

    /// Dimension of frame and center-of-mass positions.
    fn workspace_dim(&self) -> usize;

    fn frame_names(&self) -> Vec<String>;

    fn frame_index(&self, name: &str) -> Option<usize> {
        self.frame_names().iter().position(|f| f == name)
    }

    fn frame_position(&self, q: &DVector<f64>, frame: usize) -> DVector<f64>;

    fn frame_jacobian(&self, q: &DVector<f64>, frame: usize) -> DMatrix<f64>;

    /// `J̇(q, v) · v`, the frame acceleration at zero joint acceleration.
    fn frame_drift(&self, q: &DVector<f64>, v: &DVector<f64>, frame: usize) -> DVector<f64>;

    fn com(&self, q: &DVector<f64>) -> DVector<f64>;

    fn com_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64>;

    /// `M(q)·a + b(q, v)`.
    fn inverse_dynamics(&self, q: &DVector<f64>, v: &DVector<f64>, a: &DVector<f64>) -> DVector<f64> {
        self.mass_matrix(q) * a + self.bias(q, v)
    }

    /// Partials of [`Multibody::inverse_dynamics`] with respect to `q`
    /// (tangent coordinates) and `v`.
    fn rnea_partials(&self, q: &DVector<f64>, v: &DVector<f64>, a: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let dq = tangent_jacobian(self.config_space(), q, |q| self.inverse_dynamics(q, v, a));
        let dv = vector_jacobian(v, |v| self.bias(q, v));
        (dq, dv)
    }

    /// Partials of the frame acceleration `J(q)·a + J̇(q, v)·v` with respect
    /// to `q` and `v`.
    fn frame_acceleration_partials(
        &self,
        q: &DVector<f64>,
        v: &DVector<f64>,
        a: &DVector<f64>,
        frame: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let dq = tangent_jacobian(self.config_space(), q, |q| {
            self.frame_jacobian(q, frame) * a + self.frame_drift(q, v, frame)
        });
        let dv = vector_jacobian(v, |v| self.frame_drift(q, v, frame));
        (dq, dv)
    }

    /// `∂(J(q)ᵀ·f)/∂q` for a fixed frame force `f`.
    fn jacobian_transpose_partial(&self, q: &DVector<f64>, frame: usize, force: &DVector<f64>) -> DMatrix<f64> {
        tangent_jacobian(self.config_space(), q, |q| self.frame_jacobian(q, frame).transpose() * force)
    }
}

/// Direction of a link at absolute angle `phi`, measured from straight down.
fn dir(phi: f64) -> [f64; 2] {
    [phi.sin(), -phi.cos()]
}

/// Derivative of [`dir`] with respect to `phi`.
fn dir_prime(phi: f64) -> [f64; 2] {
    [phi.cos(), phi.sin()]
}

/// A point mass in `dim` dimensions driven by a force on every axis. Gravity,
/// when nonzero, pulls along the negative last axis.
#[derive(Debug, Clone)]
pub struct PointMass {
    name: String,
    mass: f64,
    gravity: f64,
    space: Manifold,
}

impl PointMass {
    pub fn new(name: &str, dim: usize, mass: f64, gravity: f64) -> Self {
        PointMass { name: name.to_string(), mass, gravity, space: Manifold::vector(dim) }
    }

    fn dim(&self) -> usize {
        self.space.nx()
    }
}

impl Multibody for PointMass {
    fn name(&self) -> &str {
        &self.name
    }
    fn config_space(&self) -> &Manifold {
        &self.space
    }
    fn nv(&self) -> usize {
        self.dim()
    }
    fn nu(&self) -> usize {
        self.dim()
    }
    fn actuation(&self) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim())
    }
    fn mass_matrix(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim()) * self.mass
    }
    fn bias(&self, _q: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        let mut b = DVector::zeros(self.dim());
        if self.dim() > 0 {
            b[self.dim() - 1] = self.mass * self.gravity;
        }
        b
    }
    fn workspace_dim(&self) -> usize {
        self.dim()
    }
    fn frame_names(&self) -> Vec<String> {
        vec!["body".to_string()]
    }
    fn frame_position(&self, q: &DVector<f64>, _frame: usize) -> DVector<f64> {
        q.clone()
    }
    fn frame_jacobian(&self, _q: &DVector<f64>, _frame: usize) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim())
    }
    fn frame_drift(&self, _q: &DVector<f64>, _v: &DVector<f64>, _frame: usize) -> DVector<f64> {
        DVector::zeros(self.dim())
    }
    fn com(&self, q: &DVector<f64>) -> DVector<f64> {
        q.clone()
    }
    fn com_jacobian(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::identity(self.dim(), self.dim())
    }
    fn rnea_partials(&self, _q: &DVector<f64>, _v: &DVector<f64>, _a: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.dim();
        (DMatrix::zeros(n, n), DMatrix::zeros(n, n))
    }
    fn frame_acceleration_partials(
        &self,
        _q: &DVector<f64>,
        _v: &DVector<f64>,
        _a: &DVector<f64>,
        _frame: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.dim();
        (DMatrix::zeros(n, n), DMatrix::zeros(n, n))
    }
    fn jacobian_transpose_partial(&self, _q: &DVector<f64>, _frame: usize, _f: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(self.dim(), self.dim())
    }
}

/// Inertial parameters of one planar link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub length: f64,
    pub mass: f64,
    /// Distance from the proximal joint to the center of mass.
    pub com: f64,
    /// Rotational inertia about the center of mass.
    pub inertia: f64,
}

impl Link {
    /// Uniform rod.
    pub fn rod(length: f64, mass: f64) -> Self {
        Link { length, mass, com: 0.5 * length, inertia: mass * length * length / 12.0 }
    }
}

/// Fully actuated single pendulum hanging from a fixed pivot at the origin.
/// The joint angle is zero when hanging straight down.
#[derive(Debug, Clone)]
pub struct Pendulum {
    link: Link,
    gravity: f64,
    space: Manifold,
}

impl Pendulum {
    pub fn new(link: Link, gravity: f64) -> Self {
        Pendulum { link, gravity, space: Manifold::vector(1) }
    }
}

impl Multibody for Pendulum {
    fn name(&self) -> &str {
        "pendulum"
    }
    fn config_space(&self) -> &Manifold {
        &self.space
    }
    fn nv(&self) -> usize {
        1
    }
    fn nu(&self) -> usize {
        1
    }
    fn actuation(&self) -> DMatrix<f64> {
        DMatrix::identity(1, 1)
    }
    fn mass_matrix(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        let l = &self.link;
        DMatrix::from_element(1, 1, l.inertia + l.mass * l.com * l.com)
    }
    fn bias(&self, q: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        let l = &self.link;
        DVector::from_element(1, l.mass * self.gravity * l.com * q[0].sin())
    }
    fn workspace_dim(&self) -> usize {
        2
    }
    fn frame_names(&self) -> Vec<String> {
        vec!["tip".to_string()]
    }
    fn frame_position(&self, q: &DVector<f64>, _frame: usize) -> DVector<f64> {
        let d = dir(q[0]);
        DVector::from_column_slice(&[self.link.length * d[0], self.link.length * d[1]])
    }
    fn frame_jacobian(&self, q: &DVector<f64>, _frame: usize) -> DMatrix<f64> {
        let d = dir_prime(q[0]);
        DMatrix::from_column_slice(2, 1, &[self.link.length * d[0], self.link.length * d[1]])
    }
    fn frame_drift(&self, q: &DVector<f64>, v: &DVector<f64>, _frame: usize) -> DVector<f64> {
        let d = dir(q[0]);
        let s = -self.link.length * v[0] * v[0];
        DVector::from_column_slice(&[s * d[0], s * d[1]])
    }
    fn com(&self, q: &DVector<f64>) -> DVector<f64> {
        let d = dir(q[0]);
        DVector::from_column_slice(&[self.link.com * d[0], self.link.com * d[1]])
    }
    fn com_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let d = dir_prime(q[0]);
        DMatrix::from_column_slice(2, 1, &[self.link.com * d[0], self.link.com * d[1]])
    }
    fn rnea_partials(&self, q: &DVector<f64>, _v: &DVector<f64>, _a: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let l = &self.link;
        (DMatrix::from_element(1, 1, l.mass * self.gravity * l.com * q[0].cos()), DMatrix::zeros(1, 1))
    }
}

/// Fully actuated double pendulum on a fixed pivot. `q[1]` is the elbow angle
/// relative to the first link.
#[derive(Debug, Clone)]
pub struct DoublePendulum {
    links: [Link; 2],
    gravity: f64,
    space: Manifold,
}

impl DoublePendulum {
    pub fn new(first: Link, second: Link, gravity: f64) -> Self {
        DoublePendulum { links: [first, second], gravity, space: Manifold::vector(2) }
    }

    /// `m₂·L₁·c₂`, the coupling coefficient.
    fn coupling(&self) -> f64 {
        self.links[1].mass * self.links[0].length * self.links[1].com
    }

    fn point(&self, q: &DVector<f64>, on_second: bool, dist: f64) -> ([f64; 2], DMatrix<f64>) {
        let (d1, d12) = (dir(q[0]), dir(q[0] + q[1]));
        let (p1, p12) = (dir_prime(q[0]), dir_prime(q[0] + q[1]));
        if !on_second {
            let pos = [dist * d1[0], dist * d1[1]];
            let jac = DMatrix::from_row_slice(2, 2, &[dist * p1[0], 0.0, dist * p1[1], 0.0]);
            return (pos, jac);
        }
        let l1 = self.links[0].length;
        let pos = [l1 * d1[0] + dist * d12[0], l1 * d1[1] + dist * d12[1]];
        let jac = DMatrix::from_row_slice(
            2,
            2,
            &[
                l1 * p1[0] + dist * p12[0],
                dist * p12[0],
                l1 * p1[1] + dist * p12[1],
                dist * p12[1],
            ],
        );
        (pos, jac)
    }

    fn frame_point(&self, frame: usize) -> (bool, f64) {
        match frame {
            0 => (false, self.links[0].length),
            _ => (true, self.links[1].length),
        }
    }
}

impl Multibody for DoublePendulum {
    fn name(&self) -> &str {
        "double_pendulum"
    }
    fn config_space(&self) -> &Manifold {
        &self.space
    }
    fn nv(&self) -> usize {
        2
    }
    fn nu(&self) -> usize {
        2
    }
    fn actuation(&self) -> DMatrix<f64> {
        DMatrix::identity(2, 2)
    }
    fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let [a, b] = self.links;
        let h = self.coupling() * q[1].cos();
        let m22 = b.inertia + b.mass * b.com * b.com;
        let m12 = m22 + h;
        let m11 = a.inertia + a.mass * a.com * a.com + b.inertia + b.mass * (a.length * a.length + b.com * b.com) + 2.0 * h;
        DMatrix::from_row_slice(2, 2, &[m11, m12, m12, m22])
    }
    fn bias(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let [a, b] = self.links;
        let h = self.coupling() * q[1].sin();
        let g = self.gravity;
        let s1 = q[0].sin();
        let s12 = (q[0] + q[1]).sin();
        let g2 = b.mass * g * b.com * s12;
        let g1 = (a.mass * a.com + b.mass * a.length) * g * s1 + g2;
        DVector::from_column_slice(&[-h * (2.0 * v[0] * v[1] + v[1] * v[1]) + g1, h * v[0] * v[0] + g2])
    }
    fn workspace_dim(&self) -> usize {
        2
    }
    fn frame_names(&self) -> Vec<String> {
        vec!["elbow".to_string(), "tip".to_string()]
    }
    fn frame_position(&self, q: &DVector<f64>, frame: usize) -> DVector<f64> {
        let (second, dist) = self.frame_point(frame);
        let (p, _) = self.point(q, second, dist);
        DVector::from_column_slice(&p)
    }
    fn frame_jacobian(&self, q: &DVector<f64>, frame: usize) -> DMatrix<f64> {
        let (second, dist) = self.frame_point(frame);
        self.point(q, second, dist).1
    }
    fn frame_drift(&self, q: &DVector<f64>, v: &DVector<f64>, frame: usize) -> DVector<f64> {
        let (second, dist) = self.frame_point(frame);
        let d1 = dir(q[0]);
        if !second {
            let s = -dist * v[0] * v[0];
            return DVector::from_column_slice(&[s * d1[0], s * d1[1]]);
        }
        let d12 = dir(q[0] + q[1]);
        let w12 = v[0] + v[1];
        let s1 = -self.links[0].length * v[0] * v[0];
        let s2 = -dist * w12 * w12;
        DVector::from_column_slice(&[s1 * d1[0] + s2 * d12[0], s1 * d1[1] + s2 * d12[1]])
    }
    fn com(&self, q: &DVector<f64>) -> DVector<f64> {
        let [a, b] = self.links;
        let (p1, _) = self.point(q, false, a.com);
        let (p2, _) = self.point(q, true, b.com);
        let m = a.mass + b.mass;
        DVector::from_column_slice(&[(a.mass * p1[0] + b.mass * p2[0]) / m, (a.mass * p1[1] + b.mass * p2[1]) / m])
    }
    fn com_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let [a, b] = self.links;
        let (_, j1) = self.point(q, false, a.com);
        let (_, j2) = self.point(q, true, b.com);
        (j1 * a.mass + j2 * b.mass) / (a.mass + b.mass)
    }
    fn rnea_partials(&self, q: &DVector<f64>, v: &DVector<f64>, acc: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let [a, b] = self.links;
        let k = self.coupling();
        let (s2, c2) = q[1].sin_cos();
        let g = self.gravity;
        let c1 = q[0].cos();
        let c12 = (q[0] + q[1]).cos();
        let dg2 = b.mass * g * b.com * c12;
        let dg1_dq1 = (a.mass * a.com + b.mass * a.length) * g * c1 + dg2;

        // ∂(M a)/∂q₂ from ∂M₁₁/∂q₂ = −2k·s₂, ∂M₁₂/∂q₂ = −k·s₂
        let dma = [-2.0 * k * s2 * acc[0] - k * s2 * acc[1], -k * s2 * acc[0]];
        // Coriolis terms with h = k·s₂, ∂h/∂q₂ = k·c₂
        let dcor = [-k * c2 * (2.0 * v[0] * v[1] + v[1] * v[1]), k * c2 * v[0] * v[0]];

        let dq = DMatrix::from_row_slice(2, 2, &[dg1_dq1, dma[0] + dcor[0] + dg2, dg2, dma[1] + dcor[1] + dg2]);
        let h = k * s2;
        let dv = DMatrix::from_row_slice(2, 2, &[-2.0 * h * v[1], -2.0 * h * (v[0] + v[1]), 2.0 * h * v[0], 0.0]);
        (dq, dv)
    }
}

/// A serial chain of planar links, either pinned at the origin or attached to
/// a floating base body living on R² × SO(2).
///
/// Link angles are relative to their parent; the first joint sits at the base
/// origin. Every joint is actuated, the base is not.
#[derive(Debug, Clone)]
pub struct PlanarChain {
    name: String,
    base: Option<(f64, f64)>,
    links: Vec<Link>,
    gravity: f64,
    tip: String,
    space: Manifold,
}

/// Absolute link angles and angular-velocity selectors for one configuration.
struct ChainPose {
    base: [f64; 2],
    phi: Vec<f64>,
}

impl PlanarChain {
    pub fn fixed(name: &str, links: Vec<Link>, gravity: f64, tip: &str) -> Self {
        let space = Manifold::vector(links.len());
        PlanarChain { name: name.to_string(), base: None, links, gravity, tip: tip.to_string(), space }
    }

    /// Floating base with the given mass and rotational inertia.
    pub fn floating(name: &str, base_mass: f64, base_inertia: f64, links: Vec<Link>, gravity: f64, tip: &str) -> Self {
        let space = Manifold::product(&[&Manifold::free_flyer_planar(), &Manifold::vector(links.len())]);
        PlanarChain {
            name: name.to_string(),
            base: Some((base_mass, base_inertia)),
            links,
            gravity,
            tip: tip.to_string(),
            space,
        }
    }

    fn offset(&self) -> usize {
        if self.base.is_some() {
            3
        } else {
            0
        }
    }

    pub fn total_mass(&self) -> f64 {
        self.base.map_or(0.0, |b| b.0) + self.links.iter().map(|l| l.mass).sum::<f64>()
    }

    fn pose(&self, q: &DVector<f64>) -> ChainPose {
        let (base, theta, joints) = match self.base {
            Some(_) => ([q[0], q[1]], q[3].atan2(q[2]), q.rows(4, self.links.len())),
            None => ([0.0, 0.0], 0.0, q.rows(0, self.links.len())),
        };
        let mut acc = theta;
        let phi = joints
            .iter()
            .map(|qi| {
                acc += qi;
                acc
            })
            .collect();
        ChainPose { base, phi }
    }

    /// Angular velocity of link `j`.
    fn omega(&self, v: &DVector<f64>, j: usize) -> f64 {
        let base = if self.base.is_some() { v[2] } else { 0.0 };
        base + v.rows(self.offset(), j + 1).sum()
    }

    /// Whether velocity coordinate `k` rotates link `j`.
    fn rotates(&self, k: usize, j: usize) -> bool {
        match self.base {
            Some(_) if k < 2 => false,
            Some(_) if k == 2 => true,
            _ => k - self.offset() <= j,
        }
    }

    /// Position, Jacobian and drift of the point at distance `dist` along link `j`.
    fn point(&self, pose: &ChainPose, v: Option<&DVector<f64>>, j: usize, dist: f64) -> ([f64; 2], DMatrix<f64>, [f64; 2]) {
        let nv = self.nv();
        let mut pos = pose.base;
        let mut jac = DMatrix::zeros(2, nv);
        let mut drift = [0.0, 0.0];
        if self.base.is_some() {
            jac[(0, 0)] = 1.0;
            jac[(1, 1)] = 1.0;
        }
        for i in 0..=j {
            let len = if i == j { dist } else { self.links[i].length };
            let d = dir(pose.phi[i]);
            let dp = dir_prime(pose.phi[i]);
            pos[0] += len * d[0];
            pos[1] += len * d[1];
            for k in 0..nv {
                if self.rotates(k, i) {
                    jac[(0, k)] += len * dp[0];
                    jac[(1, k)] += len * dp[1];
                }
            }
            if let Some(v) = v {
                let w = self.omega(v, i);
                drift[0] -= len * w * w * d[0];
                drift[1] -= len * w * w * d[1];
            }
        }
        (pos, jac, drift)
    }

    fn tip_link(&self) -> (usize, f64) {
        let j = self.links.len() - 1;
        (j, self.links[j].length)
    }

    /// Frames are the tip of the last link, then the base origin when floating.
    fn frame_point(&self, pose: &ChainPose, v: Option<&DVector<f64>>, frame: usize) -> ([f64; 2], DMatrix<f64>, [f64; 2]) {
        if frame == 0 {
            let (j, len) = self.tip_link();
            return self.point(pose, v, j, len);
        }
        let mut jac = DMatrix::zeros(2, self.nv());
        jac[(0, 0)] = 1.0;
        jac[(1, 1)] = 1.0;
        (pose.base, jac, [0.0, 0.0])
    }
}

impl Multibody for PlanarChain {
    fn name(&self) -> &str {
        &self.name
    }
    fn config_space(&self) -> &Manifold {
        &self.space
    }
    fn nv(&self) -> usize {
        self.offset() + self.links.len()
    }
    fn nu(&self) -> usize {
        self.links.len()
    }
    fn actuation(&self) -> DMatrix<f64> {
        let mut s = DMatrix::zeros(self.nv(), self.nu());
        for i in 0..self.nu() {
            s[(self.offset() + i, i)] = 1.0;
        }
        s
    }
    fn mass_matrix(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let nv = self.nv();
        let pose = self.pose(q);
        let mut m = DMatrix::zeros(nv, nv);
        if let Some((mb, ib)) = self.base {
            m[(0, 0)] += mb;
            m[(1, 1)] += mb;
            m[(2, 2)] += ib;
        }
        for (j, link) in self.links.iter().enumerate() {
            let (_, jac, _) = self.point(&pose, None, j, link.com);
            m += jac.transpose() * &jac * link.mass;
            let sel = DVector::from_fn(nv, |k, _| if self.rotates(k, j) { 1.0 } else { 0.0 });
            m += &sel * sel.transpose() * link.inertia;
        }
        m
    }
    fn bias(&self, q: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        let nv = self.nv();
        let pose = self.pose(q);
        let mut b = DVector::zeros(nv);
        if let Some((mb, _)) = self.base {
            b[1] += mb * self.gravity;
        }
        for (j, link) in self.links.iter().enumerate() {
            let (_, jac, drift) = self.point(&pose, Some(v), j, link.com);
            let force = DVector::from_column_slice(&[drift[0] * link.mass, (drift[1] + self.gravity) * link.mass]);
            b += jac.transpose() * force;
        }
        b
    }
    fn workspace_dim(&self) -> usize {
        2
    }
    fn frame_names(&self) -> Vec<String> {
        let mut names = vec![self.tip.clone()];
        if self.base.is_some() {
            names.push("base".to_string());
        }
        names
    }
    fn frame_position(&self, q: &DVector<f64>, frame: usize) -> DVector<f64> {
        let (p, _, _) = self.frame_point(&self.pose(q), None, frame);
        DVector::from_column_slice(&p)
    }
    fn frame_jacobian(&self, q: &DVector<f64>, frame: usize) -> DMatrix<f64> {
        self.frame_point(&self.pose(q), None, frame).1
    }
    fn frame_drift(&self, q: &DVector<f64>, v: &DVector<f64>, frame: usize) -> DVector<f64> {
        let (_, _, d) = self.frame_point(&self.pose(q), Some(v), frame);
        DVector::from_column_slice(&d)
    }
    fn com(&self, q: &DVector<f64>) -> DVector<f64> {
        let pose = self.pose(q);
        let mut c = [0.0, 0.0];
        if let Some((mb, _)) = self.base {
            c[0] += mb * pose.base[0];
            c[1] += mb * pose.base[1];
        }
        for (j, link) in self.links.iter().enumerate() {
            let (p, _, _) = self.point(&pose, None, j, link.com);
            c[0] += link.mass * p[0];
            c[1] += link.mass * p[1];
        }
        DVector::from_column_slice(&c) / self.total_mass()
    }
    fn com_jacobian(&self, q: &DVector<f64>) -> DMatrix<f64> {
        let pose = self.pose(q);
        let mut jac = DMatrix::zeros(2, self.nv());
        if let Some((mb, _)) = self.base {
            jac[(0, 0)] += mb;
            jac[(1, 1)] += mb;
        }
        for (j, link) in self.links.iter().enumerate() {
            let (_, jl, _) = self.point(&pose, None, j, link.com);
            jac += jl * link.mass;
        }
        jac / self.total_mass()
    }
}

/// Planar point-mass hopper: a body and a foot joined by an actuated leg that
/// can slide horizontally and telescope vertically.
///
/// `q = (x, z, s, l)` with the body at `(x, z)` and the foot at `(x + s, z − l)`.
/// The inertia is constant and the kinematics linear, so all partials vanish.
#[derive(Debug, Clone)]
pub struct Hopper {
    body_mass: f64,
    foot_mass: f64,
    gravity: f64,
    space: Manifold,
}

impl Hopper {
    pub fn new(body_mass: f64, foot_mass: f64, gravity: f64) -> Self {
        Hopper { body_mass, foot_mass, gravity, space: Manifold::vector(4) }
    }

    fn jacobian(frame: usize) -> DMatrix<f64> {
        match frame {
            0 => DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            _ => DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, -1.0]),
        }
    }
}

impl Multibody for Hopper {
    fn name(&self) -> &str {
        "hopper"
    }
    fn config_space(&self) -> &Manifold {
        &self.space
    }
    fn nv(&self) -> usize {
        4
    }
    fn nu(&self) -> usize {
        2
    }
    fn actuation(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0])
    }
    fn mass_matrix(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        let (jb, jf) = (Self::jacobian(0), Self::jacobian(1));
        jb.transpose() * &jb * self.body_mass + jf.transpose() * &jf * self.foot_mass
    }
    fn bias(&self, _q: &DVector<f64>, _v: &DVector<f64>) -> DVector<f64> {
        let up = DVector::from_column_slice(&[0.0, self.gravity]);
        Self::jacobian(0).transpose() * &up * self.body_mass + Self::jacobian(1).transpose() * &up * self.foot_mass
    }
    fn workspace_dim(&self) -> usize {
        2
    }
    fn frame_names(&self) -> Vec<String> {
        vec!["body".to_string(), "foot".to_string()]
    }
    fn frame_position(&self, q: &DVector<f64>, frame: usize) -> DVector<f64> {
        Self::jacobian(frame) * q
    }
    fn frame_jacobian(&self, _q: &DVector<f64>, frame: usize) -> DMatrix<f64> {
        Self::jacobian(frame)
    }
    fn frame_drift(&self, _q: &DVector<f64>, _v: &DVector<f64>, _frame: usize) -> DVector<f64> {
        DVector::zeros(2)
    }
    fn com(&self, q: &DVector<f64>) -> DVector<f64> {
        self.com_jacobian(q) * q
    }
    fn com_jacobian(&self, _q: &DVector<f64>) -> DMatrix<f64> {
        (Self::jacobian(0) * self.body_mass + Self::jacobian(1) * self.foot_mass) / (self.body_mass + self.foot_mass)
    }
    fn rnea_partials(&self, _q: &DVector<f64>, _v: &DVector<f64>, _a: &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        (DMatrix::zeros(4, 4), DMatrix::zeros(4, 4))
    }
    fn frame_acceleration_partials(
        &self,
        _q: &DVector<f64>,
        _v: &DVector<f64>,
        _a: &DVector<f64>,
        _frame: usize,
    ) -> (DMatrix<f64>, DMatrix<f64>) {
        (DMatrix::zeros(2, 4), DMatrix::zeros(2, 4))
    }
    fn jacobian_transpose_partial(&self, _q: &DVector<f64>, _frame: usize, _f: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::zeros(4, 4)
    }
}
