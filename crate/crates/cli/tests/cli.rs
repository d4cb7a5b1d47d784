use std::path::Path;
use std::process::{Command, Output};

use stablelab_cli::report::*;

fn stablelab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stablelab")).args(args).output().expect("spawn stablelab")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.display().to_string()
}

const TWO_MODE: &str = r#"{"model":{"modes":[{"gamma":1.0,"mu":1.0},{"gamma":-1.0,"mu":1.0}]},
    "kernel":{"type":"dense","data":[[[0,0],[0,0]],[[1,0],[0,0]]]},
    "h":[0.3,0.0],"eps1":0.35,"eps2":0.5,"grid":{"x_max":20.0,"n":2001}}"#;

#[test]
fn ce1_table_rows_exceed_rho_power() {
    let out = stablelab(&["ce1", "--theta", "0.5235988", "--j-max", "12"]);
    assert!(out.status.success());
    let rep: Envelope<Ce1Config, Ce1Result> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep.command, "ce1");
    assert_eq!(rep.version, env!("CARGO_PKG_VERSION"));
    assert_eq!(rep.result.rows.len(), 12);
    assert!(rep.result.rows.iter().all(|r| r.exceeds && r.ratio >= r.rho_pow));
    assert!((rep.result.rho - 1.0944505).abs() < 1e-6);
}

#[test]
fn ce2_table_matches_closed_forms() {
    let out = stablelab(&["ce2", "--j-max", "10"]);
    assert!(out.status.success());
    let rep: Envelope<Ce2Config, Ce2Result> = serde_json::from_slice(&out.stdout).unwrap();
    for r in &rep.result.rows {
        let j = r.j as f64;
        assert_eq!(r.s_first, 1.0 / (j * j));
        assert_eq!(r.s_rest, 1.0 / (4.0 * j * j));
        assert!((r.norm_sq - (1.0 / j.powi(4) + (2f64.powi(r.j as i32) - 1.0) / (16.0 * j.powi(4)))).abs() < 1e-15);
        if r.j <= 4 {
            assert!((r.lattice_first.unwrap() - r.s_first).abs() < 1e-12);
            assert!((r.lattice_rest.unwrap() - r.s_rest).abs() < 1e-12);
        } else {
            assert!(r.lattice_first.is_none());
        }
    }
}

#[test]
fn csv_tables_have_headers() {
    let out = stablelab(&["ce1", "--j-max", "3", "--format", "csv"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().next(), Some("j,ratio,rho_pow,closed_form,exceeds"));
    assert_eq!(text.lines().count(), 4);
}

#[test]
fn check_reports_bracket_and_hs_bound() {
    let dir = tempfile::tempdir().unwrap();
    let k = write(dir.path(), "k.json", r#"{"type":"dense","data":[[[1,0],[0,0]],[[0,0],[0,-1]]]}"#);
    let a = write(dir.path(), "a.json", "[1.0, 2.0]");
    let out = stablelab(&["check", "--kernel", &k, "--alpha", &a]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: Envelope<CheckConfig, CheckResult> = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(rep.result.hs_norm_sq, 2.0);
    assert_eq!(rep.result.rows[0].lower, 1.0);
    assert_eq!(rep.result.rows[1].lower, 4.0);
    assert!(rep.result.violations.is_empty());
    assert!(rep.result.rows.iter().all(|r| r.lower <= r.upper && r.exhaustive));
}

#[test]
fn solve_writes_report_atomically_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let req = write(dir.path(), "req.json", TWO_MODE);
    let out_path = dir.path().join("report.json");
    let out = stablelab(&["solve", "--request", &req, "--output", out_path.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(out.stdout.is_empty());
    let rep: Envelope<SolveConfig, SolveResult> = serde_json::from_slice(&std::fs::read(&out_path).unwrap()).unwrap();
    assert!((rep.result.graph_value[1] - 0.03).abs() < 1e-5);
    assert_eq!(rep.config.beta, 0.5);
    assert_eq!(rep.config.grid_nodes, 2001);
    // only the report is left in the directory
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
}

#[test]
fn solve_then_decay_from_csv() {
    let dir = tempfile::tempdir().unwrap();
    let req = write(dir.path(), "req.json", TWO_MODE);
    let traj = dir.path().join("u.csv");
    let out = stablelab(&["solve", "--request", &req, "--format", "csv", "--output", traj.to_str().unwrap()]);
    assert!(out.status.success());
    let out = stablelab(&["decay", "--trajectory", traj.to_str().unwrap(), "--window", "2,10"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rep: Envelope<DecayConfig, DecayResult> = serde_json::from_slice(&out.stdout).unwrap();
    assert!((0.95..=1.05).contains(&rep.result.fitted_beta));
}

#[test]
fn malformed_request_exits_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let req = write(dir.path(), "bad.json", r#"{"model": {"modes": [}"#);
    let target = dir.path().join("out.json");
    let out = stablelab(&["solve", "--request", &req, "--output", target.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!target.exists());
    assert!(!out.stderr.is_empty());
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write(dir.path(), "u.json", &TWO_MODE.replace("\"h\"", "\"bogus\":1,\"h\""));
    assert_eq!(stablelab(&["solve", "--request", &unknown]).status.code(), Some(2));
    let unstable = write(dir.path(), "s.json", &TWO_MODE.replace("[0.3,0.0]", "[0.0,0.1]"));
    assert_eq!(stablelab(&["solve", "--request", &unstable]).status.code(), Some(2));
    let too_big = write(dir.path(), "b.json", &TWO_MODE.replace("[0.3,0.0]", "[0.4,0.0]"));
    assert_eq!(stablelab(&["solve", "--request", &too_big]).status.code(), Some(2));
    assert_eq!(stablelab(&["ce1", "--theta", "2.0"]).status.code(), Some(2));
    assert_eq!(stablelab(&["ce2", "--lattice-max", "5"]).status.code(), Some(2));
    assert_eq!(stablelab(&["check", "--kernel", "/nonexistent.json"]).status.code(), Some(2));
}

#[test]
fn divergence_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let req = write(
        dir.path(),
        "r.json",
        r#"{"model":{"modes":[{"gamma":1.0,"mu":1.0}]},"kernel":{"type":"dense","data":[[[1.0]]]},
            "h":[1.5],"eps1":5,"eps2":5,"grid":{"x_max":20,"n":2001}}"#,
    );
    let out = stablelab(&["solve", "--request", &req]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("diverged"));
}

#[test]
fn thread_count_does_not_change_output() {
    let a = stablelab(&["ce2", "--j-max", "6", "--threads", "1"]);
    let b = stablelab(&["ce2", "--j-max", "6", "--threads", "2"]);
    assert!(a.status.success() && b.status.success());
    assert_eq!(a.stdout, b.stdout);
}
