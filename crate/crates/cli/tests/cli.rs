use serde_json::Value;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn sweepctl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sweepctl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn fixture(name: &str) -> String {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures")
        .join(name)
        .display()
        .to_string()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn s(p: &Path) -> String {
    p.display().to_string()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&sweepctl(&["bogus"])), 2);
    assert_eq!(code(&sweepctl(&["check", "no-such-problem"])), 2);
    assert_eq!(code(&sweepctl(&["example", "export", "nope"])), 2);
    assert_eq!(code(&sweepctl(&["--tol-scale", "0", "example", "list"])), 2);
    let list = sweepctl(&["example", "list"]);
    assert_eq!(code(&list), 0);
    assert!(String::from_utf8_lossy(&list.stdout).contains("paper-6-1"));
}

#[test]
fn malformed_problem_files_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    let text = std::fs::read_to_string(fixture("unit_ball.json")).unwrap();
    std::fs::write(&bad, text.replace("\"schema_version\": 1", "\"schema_version\": 7")).unwrap();
    assert_eq!(code(&sweepctl(&["check", &s(&bad)])), 2);
    std::fs::write(&bad, text.replace("\"x1^2 + x2^2 - 1\"", "\"x1^2 + x9\"")).unwrap();
    assert_eq!(code(&sweepctl(&["check", &s(&bad)])), 2);
}

#[test]
fn check_flags_each_assumption() {
    let dup = sweepctl(&["check", &fixture("duplicated.json"), "--control", "const:1,0"]);
    assert_eq!(code(&dup), 1);
    let r = stdout_json(&dup);
    assert_eq!(r["first_failure"], "A2.3");
    assert!((r["b_hat"].as_f64().unwrap() - 1.0).abs() < 1e-9);

    let opp = sweepctl(&["check", &fixture("opposing.json"), "--control", "const:1"]);
    assert_eq!(code(&opp), 1);
    let r = stdout_json(&opp);
    assert_eq!(r["first_failure"], "A2.2");
    assert!(r["eta_hat"].as_f64().unwrap() < 1e-9);

    let ball = sweepctl(&["check", &fixture("unit_ball.json"), "--control", "const:1,0"]);
    assert_eq!(code(&ball), 0);
    assert!(stdout_json(&ball)["first_failure"].is_null());

    let ex = sweepctl(&["check", "paper-6-1", "--control", "const:1"]);
    assert_eq!(code(&ex), 0);
    let r = stdout_json(&ex);
    assert!((r["b_hat"].as_f64().unwrap() - 0.6).abs() < 1e-6);
    assert!(r["ball_suggestion"].is_object());
}

#[test]
fn closed_form_certificate_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let cert = dir.path().join("cert.json");
    let out = sweepctl(&["example", "certificate", "paper-6-1", "--cells", "400", "--out", &s(&cert)]);
    assert_eq!(code(&out), 0);
    let report = dir.path().join("report.json");
    let ok = sweepctl(&["verify", &s(&cert), "paper-6-1", "--report", &s(&report)]);
    assert_eq!(code(&ok), 0, "{}", String::from_utf8_lossy(&ok.stderr));
    let rep: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    assert_eq!(rep["pass"], true);

    let mut c: Value = serde_json::from_str(&std::fs::read_to_string(&cert).unwrap()).unwrap();
    for m in c["nu"].as_array_mut().unwrap() {
        m["atoms"] = Value::Array(vec![]);
    }
    let stripped = dir.path().join("stripped.json");
    std::fs::write(&stripped, c.to_string()).unwrap();
    assert_eq!(code(&sweepctl(&["verify", &s(&stripped), "paper-6-1"])), 1);

    let empty = dir.path().join("empty.json");
    std::fs::write(&empty, "{}").unwrap();
    assert_eq!(code(&sweepctl(&["verify", &s(&empty), "paper-6-1"])), 2);
    assert_eq!(code(&sweepctl(&["example", "certificate", "triangle-2d"])), 2);
}

#[test]
fn simulate_refuses_gamma_below_the_floor() {
    let dir = tempfile::tempdir().unwrap();
    let out = sweepctl(&["simulate", "paper-6-1", "--gamma", "10", "--control", "const:1", "--out", &s(dir.path())]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("2*Mbar/eta"));
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn simulate_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir: PathBuf = dir.path().join("sim");
    let out = sweepctl(&[
        "simulate",
        &fixture("unit_ball.json"),
        "--gamma",
        "50",
        "--control",
        "const:1,0.5",
        "--oracle",
        "--out",
        &s(&out_dir),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert!(summary["invariance_margin"].as_f64().unwrap() <= 1e-6);
    assert!(summary["sup_dist"].as_f64().unwrap() < 0.1);
    let traj = std::fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().next().unwrap(), "t,x1,x2,u1,u2,xi1");
    assert_eq!(traj.lines().count(), 18);
    assert!(out_dir.join("oracle.csv").exists());
}

#[test]
fn zero_horizon_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t0.json");
    let text = std::fs::read_to_string(fixture("unit_ball.json")).unwrap();
    std::fs::write(&p, text.replace("\"T\": 1.0", "\"T\": 0.0")).unwrap();
    let out_dir = dir.path().join("sim");
    let out = sweepctl(&["simulate", &s(&p), "--gamma", "50", "--control", "const:1,0", "--out", &s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let traj = std::fs::read_to_string(out_dir.join("trajectory.csv")).unwrap();
    assert_eq!(traj.lines().count(), 2);
}

#[test]
fn solve_writes_a_verified_certificate() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("run");
    let out = sweepctl(&["--threads", "2", "solve", "bang-bang-1d", "--init", "const:-0.5", "--out", &s(&out_dir)]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));
    for f in ["trajectory.csv", "adjoint.csv", "atoms.json", "certificate.json", "report.json", "solve.json"] {
        assert!(out_dir.join(f).exists(), "{f}");
    }
    let summary: Value = serde_json::from_str(&std::fs::read_to_string(out_dir.join("solve.json")).unwrap()).unwrap();
    assert!((summary["terminal_state"][0].as_f64().unwrap() - 1.0).abs() < 0.05);
    assert_eq!(summary["lambda"], 1.0);
    let again = sweepctl(&["verify", &s(&out_dir.join("certificate.json")), "bang-bang-1d"]);
    assert_eq!(code(&again), 0);
}
