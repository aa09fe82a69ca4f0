use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fddp_bench::bench::Table;
use fddp_bench::derivatives::{self, Block};
use fddp_bench::{load_scenario, ExitStatus, Scenario};
use fddp_core::solver::{SolverKind, SolverOptions};

#[derive(Parser)]
#[command(name = "fddp", version, about = "Trajectory optimization with DDP and FDDP on toy mechanical systems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct SolverArgs {
    #[arg(long)]
    solver: Option<SolverKind>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve a scenario and write trace.csv, solution.csv and summary.json.
    Solve {
        #[arg(long)]
        scenario: PathBuf,
        #[command(flatten)]
        solver: SolverArgs,
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Compare analytic derivatives with finite differences.
    CheckDerivatives {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = derivatives::DEFAULT_SEED)]
        seed: u64,
        /// Perturb one analytic block of every model (fx, fu, lx, lu).
        #[arg(long, hide = true)]
        inject_fault: Option<Block>,
    },
    /// Time solver iterations for several worker counts.
    Bench {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "1")]
        threads: Vec<usize>,
        #[arg(long, default_value_t = 5)]
        trials: usize,
        #[command(flatten)]
        solver: SolverArgs,
    },
}

fn options(scenario: &Scenario, args: &SolverArgs, threads: Option<usize>) -> SolverOptions {
    let mut o = scenario.solver;
    o.kind = args.solver.unwrap_or(o.kind);
    o.max_iters = args.max_iters.unwrap_or(o.max_iters);
    o.tolerance = args.tol.unwrap_or(o.tolerance);
    o.threads = threads.unwrap_or(o.threads);
    o
}

fn load(path: &PathBuf) -> Result<Scenario, ExitStatus> {
    load_scenario(path).map_err(|e| {
        eprintln!("error: {e}");
        ExitStatus::Config
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let status = match execute(cli.command) {
        Ok(s) | Err(s) => s,
    };
    ExitCode::from(status.code() as u8)
}

fn execute(command: Command) -> Result<ExitStatus, ExitStatus> {
    match command {
        Command::Solve { scenario, solver, threads, out } => {
            let scenario = load(&scenario)?;
            let options = options(&scenario, &solver, threads);
            match fddp_bench::run(&scenario, &options, &out) {
                Ok(outcome) => {
                    let last = outcome.report.records.last().expect("trace has row 0");
                    println!(
                        "{}: {:?} after {} iterations, cost {}, gap {}",
                        scenario.name,
                        outcome.report.termination.as_ref().expect("terminated"),
                        outcome.report.iterations(),
                        last.cost,
                        last.gap_l2
                    );
                    Ok(outcome.exit_status())
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    Err(e.exit_status())
                }
            }
        }
        Command::CheckDerivatives { scenario, samples, seed, inject_fault } => {
            let scenario = load(&scenario)?;
            let mut problem = scenario.problem().map_err(|e| {
                eprintln!("error: {e}");
                ExitStatus::Config
            })?;
            if let Some(block) = inject_fault {
                problem = derivatives::corrupt(&problem, block).map_err(|e| {
                    eprintln!("error: {e}");
                    ExitStatus::Config
                })?;
            }
            let report = derivatives::check_derivatives(&problem, samples, seed).map_err(|e| {
                eprintln!("error: evaluation failed: {e}");
                ExitStatus::Failure
            })?;
            print!("{report}");
            for f in report.failures() {
                eprintln!("mismatch: node {} block {} error {:e}", f.nodes[0], f.block, f.max_error);
            }
            Ok(if report.passed() { ExitStatus::Converged } else { ExitStatus::Mismatch })
        }
        Command::Bench { scenario, threads, trials, solver } => {
            let scenario = load(&scenario)?;
            let options = options(&scenario, &solver, None);
            match fddp_bench::bench(&scenario, &options, &threads, trials) {
                Ok(rows) => {
                    print!("{}", Table(&rows));
                    Ok(ExitStatus::Converged)
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    Err(e.exit_status())
                }
            }
        }
    }
}
