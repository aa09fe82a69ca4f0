//! Multiple-shooting trajectory optimization with DDP and FDDP.
//!
//! States live on manifolds ([`manifold`]), node dynamics and costs are
//! action models ([`action`]) that may include rigid contacts and impacts
//! ([`contact`]), and [`solver`] runs the Riccati-based DDP and FDDP loops.

pub mod action;
pub mod contact;
pub mod dynamics;
pub mod kkt;
pub mod manifold;
pub mod multibody;
pub mod numdiff;
pub mod problem;
pub mod solver;

pub use action::{ActionData, ActionError, ActionModel, CostTerm, ImpulseModel, IntegratedActionModel, TerminalModel};
pub use contact::Contact;
pub use dynamics::{Dynamics, LinearDynamics, MultibodyDynamics};
pub use kkt::kkt_search_direction;
pub use manifold::{Manifold, ManifoldSpec};
pub use multibody::Multibody;
pub use problem::ShootingProblem;
pub use solver::{goldstein_accept, solve, SolveReport, Solver, SolverKind, SolverOptions, Termination};
