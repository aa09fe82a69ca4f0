//! Scenario runner, derivative checker and timing harness for `fddp-core`.

pub mod bench;
pub mod catalogue;
pub mod derivatives;
pub mod run;
pub mod scenario;
pub mod solution;

pub use bench::{bench, BenchRow};
pub use derivatives::{check_derivatives, Block, DerivativeReport};
pub use run::{run, solve_scenario, Outcome, RunError};
pub use scenario::{load_scenario, Scenario, ScenarioError};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitStatus {
    Converged = 0,
    /// Derivative check found a mismatch.
    Mismatch = 1,
    MaxIters = 2,
    Failure = 3,
    Io = 4,
    Config = 5,
}

impl ExitStatus {
    pub fn code(self) -> i32 {
        self as i32
    }
}

/// Directory holding the bundled scenarios.
pub fn scenario_dir() -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
}

pub const BUNDLED: [&str; 5] =
    ["lqr_chain", "double_integrator", "pendulum_swingup", "monoped_hop", "monoped_hop_warmstart_infeasible"];

pub fn bundled(name: &str) -> Result<Scenario, ScenarioError> {
    load_scenario(scenario_dir().join(format!("{name}.json")))
}
