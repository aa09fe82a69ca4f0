use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fddp_bench::derivatives::{check_derivatives, corrupt, Block};
use fddp_bench::scenario::{parse_scenario, StepSizes};
use fddp_bench::solution::{read_solution, read_trace, write_solution, TRACE_COLUMNS};
use fddp_bench::{bench, bundled, load_scenario, scenario_dir, ScenarioError, BUNDLED};
use fddp_core::solver::{goldstein_accept, SolverKind, SolverOptions};

fn fddp(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fddp")).args(args).output().expect("binary runs")
}

fn scenario_path(name: &str) -> String {
    scenario_dir().join(format!("{name}.json")).display().to_string()
}

fn pendulum_text() -> String {
    std::fs::read_to_string(scenario_path("pendulum_swingup")).unwrap()
}

fn edit(text: &str, f: impl FnOnce(&mut serde_json::Value)) -> String {
    let mut v: serde_json::Value = serde_json::from_str(text).unwrap();
    f(&mut v);
    v.to_string()
}

fn write_tmp(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

#[test]
fn bundled_scenarios_load() {
    for name in BUNDLED {
        let s = bundled(name).unwrap();
        assert_eq!(s.name, name);
        s.build().unwrap();
    }
}

#[test]
fn pendulum_swingup_has_the_documented_grid() {
    let s = bundled("pendulum_swingup").unwrap();
    assert_eq!(s.horizon, 200);
    assert_eq!(s.dt, StepSizes::Uniform(0.01));
    assert_eq!(s.model_id, "pendulum");
}

#[test]
fn monoped_hop_has_one_inelastic_switch_at_a_phase_boundary() {
    let s = bundled("monoped_hop").unwrap();
    assert_eq!(s.switches.len(), 1);
    assert_eq!(s.switches[0].restitution, 0.0);
    let phases = s.phases();
    assert_eq!(phases.len(), 3);
    assert!(!phases[0].contacts.is_empty() && phases[1].contacts.is_empty() && !phases[2].contacts.is_empty());
    assert_eq!(s.switches[0].node, phases[2].start);
    let problem = s.problem().unwrap();
    assert_eq!(problem.running()[phases[2].start].nu(), 0);
}

#[test]
fn overlapping_phases_are_named() {
    let text = edit(&std::fs::read_to_string(scenario_path("monoped_hop")).unwrap(), |v| {
        v["phases"][1]["start"] = 3.into();
    });
    let dir = tempfile::tempdir().unwrap();
    let err = load_scenario(write_tmp(dir.path(), "s.json", &text)).unwrap_err();
    assert!(matches!(err, ScenarioError::Validation(_)));
    let msg = err.to_string();
    assert!(msg.contains("overlap") && msg.contains("[0, 5)") && msg.contains("[3, 17)"), "{msg}");
}

#[test]
fn uncovered_nodes_are_named() {
    let text = edit(&std::fs::read_to_string(scenario_path("monoped_hop")).unwrap(), |v| {
        v["phases"][2]["start"] = 18.into();
        v["switches"] = serde_json::json!([]);
    });
    let err = parse_scenario(&text, Path::new("s.json")).unwrap().validate().unwrap_err();
    assert!(err.to_string().contains("uncovered"), "{err}");
}

#[test]
fn switches_off_a_boundary_are_rejected() {
    let text = edit(&std::fs::read_to_string(scenario_path("monoped_hop")).unwrap(), |v| {
        v["switches"][0]["node"] = 12.into();
    });
    let err = parse_scenario(&text, Path::new("s.json")).unwrap().validate().unwrap_err();
    assert!(err.to_string().contains("switch node 12"), "{err}");
}

#[test]
fn unknown_model_id_is_named() {
    let text = edit(&pendulum_text(), |v| v["model_id"] = "quadcopter".into());
    let err = parse_scenario(&text, Path::new("s.json")).unwrap().validate().unwrap_err();
    assert!(matches!(&err, ScenarioError::UnknownModel(id) if id == "quadcopter"));
    assert!(err.to_string().contains("quadcopter"));
}

#[test]
fn absent_model_id_is_a_parse_error_naming_the_field() {
    let text = edit(&pendulum_text(), |v| {
        v.as_object_mut().unwrap().remove("model_id");
    });
    let err = parse_scenario(&text, Path::new("s.json")).unwrap_err();
    assert!(err.to_string().contains("model_id"), "{err}");
}

#[test]
fn parse_errors_carry_line_and_field() {
    let text = pendulum_text().replacen("\"horizon\": 200", "\"horizon\": \"many\"", 1);
    match parse_scenario(&text, Path::new("s.json")).unwrap_err() {
        ScenarioError::Parse { line, field, .. } => {
            assert_eq!(line, 4);
            assert_eq!(field, "horizon");
        }
        other => panic!("{other}"),
    }
}

#[test]
fn contacts_on_unknown_frames_are_rejected() {
    let text = edit(&std::fs::read_to_string(scenario_path("monoped_hop")).unwrap(), |v| {
        v["phases"][0]["contacts"][0]["frame"] = "hand".into();
    });
    let err = parse_scenario(&text, Path::new("s.json")).unwrap().validate().unwrap_err();
    assert!(err.to_string().contains("hand"), "{err}");
}

#[test]
fn solve_pendulum_converges_and_descends_once_feasible() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = fddp(&["solve", "--scenario", &scenario_path("pendulum_swingup"), "--solver", "fddp", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = read_trace(&out.join("trace.csv")).unwrap();
    let mut feasible = false;
    for w in rows.windows(2) {
        feasible |= w[0].gap_l2 < 1e-10;
        if feasible && w[1].accepted {
            assert!(w[1].cost <= w[0].cost, "cost rose at iteration {}", w[1].iteration);
        }
    }
    let summary: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["termination"], "converged");
    assert_eq!(summary["iterations"].as_u64().unwrap() as usize, rows.len() - 1);
    let (xs, us) = read_solution(&out.join("solution.csv")).unwrap();
    assert_eq!((xs.len(), us.len()), (201, 200));
}

#[test]
fn trace_header_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    fddp(&["solve", "--scenario", &scenario_path("lqr_chain"), "--out", out.to_str().unwrap()]);
    let text = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, format!("{},cost_normalized,gap_normalized", TRACE_COLUMNS.join(",")));
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "0");
    assert_eq!(row[7].parse::<f64>().unwrap(), 1.0);
}

#[test]
fn zero_iterations_exit_with_max_iters_and_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let o = fddp(&["solve", "--scenario", &scenario_path("pendulum_swingup"), "--max-iters", "0", "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert_eq!(read_trace(&out.join("trace.csv")).unwrap().len(), 1);
}

#[test]
fn unwritable_output_exits_with_io() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = write_tmp(dir.path(), "file", "x");
    let out = blocker.join("sub");
    let o = fddp(&["solve", "--scenario", &scenario_path("lqr_chain"), "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(4));
    assert!(!o.stderr.is_empty());
}

#[test]
fn bad_config_exits_with_config() {
    let dir = tempfile::tempdir().unwrap();
    let p = write_tmp(dir.path(), "s.json", &edit(&pendulum_text(), |v| v["model_id"] = "nope".into()));
    let o = fddp(&["solve", "--scenario", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
    let o = fddp(&["check-derivatives", "--scenario", dir.path().join("missing.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(5));
}

#[test]
fn failed_solves_exit_with_failure() {
    // an absurd step size makes every trial rollout overflow
    let dir = tempfile::tempdir().unwrap();
    let p = write_tmp(dir.path(), "s.json", &edit(&pendulum_text(), |v| v["dt"] = 1e150.into()));
    let o = fddp(&["solve", "--scenario", p.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn pendulum_derivatives_pass_with_seed_42() {
    let o = fddp(&["check-derivatives", "--scenario", &scenario_path("pendulum_swingup"), "--samples", "100", "--seed", "42"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
}

#[test]
fn lqr_derivatives_match_to_rounding() {
    let problem = bundled("lqr_chain").unwrap().problem().unwrap();
    let report = check_derivatives(&problem, 100, 0).unwrap();
    assert!(report.worst() <= 1e-8, "{report}");
}

#[test]
#[ignore = "central differences with step 1e-6 carry ~1e-9 rounding error even on linear maps"]
fn lqr_derivatives_are_exact() {
    let problem = bundled("lqr_chain").unwrap().problem().unwrap();
    let report = check_derivatives(&problem, 100, 0).unwrap();
    assert!(report.worst() <= 1e-12, "{report}");
}

#[test]
fn corrupted_blocks_are_reported_by_name() {
    for block in Block::ALL {
        let problem = corrupt(&bundled("double_integrator").unwrap().problem().unwrap(), block).unwrap();
        let report = check_derivatives(&problem, 3, 0).unwrap();
        let failed: Vec<Block> = report.failures().map(|f| f.block).collect();
        assert!(!failed.is_empty() && failed.iter().all(|b| *b == block), "{block}: {report}");
    }
    let o = fddp(&["check-derivatives", "--scenario", &scenario_path("pendulum_swingup"), "--samples", "2", "--inject-fault", "lx"]);
    assert_ne!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stderr).contains("block lx"));
}

#[test]
fn derivative_reports_are_reproducible_per_seed() {
    let problem = bundled("monoped_hop").unwrap().problem().unwrap();
    let a = check_derivatives(&problem, 3, 7).unwrap();
    let b = check_derivatives(&problem, 3, 7).unwrap();
    assert_eq!(a.rows, b.rows);
}

#[test]
fn single_thread_single_trial_bench_has_one_row() {
    let s = bundled("lqr_chain").unwrap();
    let rows = bench(&s, &s.solver, &[1], 1).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].threads, rows[0].trials), (1, 1));
    assert!(rows[0].iter_median_s > 0.0);
    let o = fddp(&["bench", "--scenario", &scenario_path("lqr_chain"), "--threads", "1", "--trials", "1"]);
    assert_eq!(o.status.code(), Some(0));
    assert_eq!(String::from_utf8_lossy(&o.stdout).lines().count(), 2);
}

#[test]
fn outputs_do_not_depend_on_worker_count() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["monoped_hop", "pendulum_swingup"] {
        let mut files = Vec::new();
        for threads in ["1", "2", "4"] {
            let out = dir.path().join(format!("{name}-{threads}"));
            fddp(&["solve", "--scenario", &scenario_path(name), "--threads", threads, "--out", out.to_str().unwrap()]);
            files.push((std::fs::read(out.join("trace.csv")).unwrap(), std::fs::read(out.join("solution.csv")).unwrap()));
        }
        assert!(files.windows(2).all(|w| w[0] == w[1]), "{name}");
    }
}

#[test]
fn accepted_rows_pass_the_goldstein_test() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    fddp(&["solve", "--scenario", &scenario_path("monoped_hop"), "--out", out.to_str().unwrap()]);
    let rows = read_trace(&out.join("trace.csv")).unwrap();
    for (i, w) in rows.windows(2).enumerate() {
        assert_eq!(w[1].iteration, i + 1);
        if w[1].accepted {
            assert!(goldstein_accept(w[1].cost, w[0].cost, w[1].expected_dj));
        }
    }
}

#[test]
fn file_warm_start_resumes_a_solution() {
    let dir = tempfile::tempdir().unwrap();
    let s = bundled("pendulum_swingup").unwrap();
    let outcome = fddp_bench::solve_scenario(&s, &s.solver).unwrap();
    write_solution(&dir.path().join("warm.csv"), &outcome.xs, &outcome.us).unwrap();
    let text = edit(&pendulum_text(), |v| v["warm_start"] = serde_json::json!({"policy": "file", "path": "warm.csv"}));
    let s = load_scenario(write_tmp(dir.path(), "s.json", &text)).unwrap();
    let built = s.build().unwrap();
    assert_eq!(built.xs, outcome.xs);
    assert_eq!(built.us, outcome.us);
    let again = fddp_bench::solve_scenario(&s, &SolverOptions { kind: SolverKind::Ddp, ..s.solver }).unwrap();
    assert!(again.report.iterations() <= 1);
}
