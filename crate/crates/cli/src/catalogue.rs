//! Built-in systems addressable by id.

use std::sync::Arc;

use fddp_core::multibody::{DoublePendulum, Hopper, Link, Pendulum, PlanarChain, PointMass, STANDARD_GRAVITY};
use fddp_core::{Dynamics, LinearDynamics, Multibody};
use nalgebra::{DMatrix, DVector};

pub const MODEL_IDS: [&str; 6] = ["lqr", "double_integrator", "pendulum", "double_pendulum", "hopper", "monoped"];

/// A catalogue entry: either an explicit linear system or a mechanical one.
#[derive(Debug, Clone)]
pub enum CatalogueModel {
    Linear(Arc<LinearDynamics>),
    Mechanical(Arc<dyn Multibody>),
}

impl CatalogueModel {
    pub fn system(&self) -> Option<&Arc<dyn Multibody>> {
        match self {
            CatalogueModel::Linear(_) => None,
            CatalogueModel::Mechanical(s) => Some(s),
        }
    }

    pub fn nx(&self) -> usize {
        match self {
            CatalogueModel::Linear(l) => l.config_space().nx() + l.nv(),
            CatalogueModel::Mechanical(s) => s.config_space().nx() + s.nv(),
        }
    }
}

pub fn lookup(id: &str) -> Option<CatalogueModel> {
    let model = match id {
        "lqr" => CatalogueModel::Linear(Arc::new(spring_chain())),
        "double_integrator" => CatalogueModel::Mechanical(Arc::new(PointMass::new("double_integrator", 1, 1.0, 0.0))),
        "pendulum" => CatalogueModel::Mechanical(Arc::new(Pendulum::new(Link::rod(0.5, 1.0), STANDARD_GRAVITY))),
        "double_pendulum" => CatalogueModel::Mechanical(Arc::new(DoublePendulum::new(
            Link::rod(0.5, 1.0),
            Link::rod(0.4, 0.7),
            STANDARD_GRAVITY,
        ))),
        "hopper" => CatalogueModel::Mechanical(Arc::new(Hopper::new(3.0, 0.5, STANDARD_GRAVITY))),
        "monoped" => CatalogueModel::Mechanical(Arc::new(PlanarChain::floating(
            "monoped",
            4.0,
            0.2,
            vec![Link::rod(0.4, 1.0), Link::rod(0.4, 0.6)],
            STANDARD_GRAVITY,
            "foot",
        ))),
        _ => return None,
    };
    Some(model)
}

/// Two masses coupled by springs with light damping and a constant drift.
fn spring_chain() -> LinearDynamics {
    let a = DMatrix::from_row_slice(
        4,
        4,
        &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, -2.0, 1.0, -0.1, 0.0, 1.0, -2.0, 0.0, -0.1],
    );
    let b = DMatrix::from_row_slice(4, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 1.0]);
    let c = DVector::from_column_slice(&[0.0, 0.0, 0.3, -0.2]);
    LinearDynamics::new(a, b, c).expect("spring chain matrices are consistent")
}
