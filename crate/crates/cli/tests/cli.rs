use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn madapt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_madapt")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn run_decay(dir: &Path, name: &str) -> Output {
    madapt(&[
        "run", "--problem", "test-equation", "--lambda", "1", "--t-final", "2", "--tol", "1e-4", "--out",
        dir.to_str().unwrap(), "--name", name,
    ])
}

#[test]
fn run_writes_report_and_traces() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_decay(dir.path(), "decay");
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("status ToleranceMet"), "{}", stdout(&o));
    let report = fs::read_to_string(dir.path().join("decay.json")).unwrap();
    assert!(report.contains("\"alpha_ratio\""));
    assert!(report.contains("\"schema\": 1"));
    let parsed = multiadaptive::bench::parse_report(&report).unwrap();
    assert_eq!(parsed.problem, "test-equation");
    let steps = fs::read_to_string(dir.path().join("decay-steps.csv")).unwrap();
    assert!(steps.lines().count() > 2);
    let solution = fs::read_to_string(dir.path().join("decay-solution.csv")).unwrap();
    assert_eq!(solution.lines().next().unwrap(), "t,U1");
    assert_eq!(solution.lines().count(), 202);
    assert!(dir.path().join("decay-timing.json").exists());
}

#[test]
fn reports_are_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    assert!(run_decay(dir.path(), "a").status.success());
    assert!(run_decay(dir.path(), "b").status.success());
    for suffix in [".json", "-steps.csv", "-solution.csv"] {
        let a = fs::read(dir.path().join(format!("a{suffix}"))).unwrap();
        let b = fs::read(dir.path().join(format!("b{suffix}"))).unwrap();
        assert_eq!(a, b, "{suffix} differs");
    }
}

#[test]
fn converge_prints_fitted_order() {
    let o = madapt(&["converge", "--problem", "test-equation", "--lambda", "1", "--t-final", "1", "--method", "mdg", "--q", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let last = out.lines().last().unwrap();
    let order: f64 = last.split("fitted order ").nth(1).unwrap().split_whitespace().next().unwrap().parse().unwrap();
    assert!((order - 3.0).abs() < 0.2, "{last}");
    assert_eq!(out.lines().count(), 6);
}

#[test]
fn dual_writes_csv_and_factors() {
    let dir = tempfile::tempdir().unwrap();
    let o = madapt(&[
        "dual", "--problem", "test-system", "--rates", "1,10", "--t-final", "1", "--tol", "1e-3", "--unit", "1",
        "--out", dir.path().to_str().unwrap(), "--name", "sys",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.contains("S^["), "{out}");
    let csv = fs::read_dir(dir.path()).unwrap().filter_map(|e| e.ok()).find(|e| e.path().extension().is_some_and(|x| x == "csv"));
    let text = fs::read_to_string(csv.expect("dual csv written").path()).unwrap();
    assert_eq!(text.lines().next().unwrap(), "t,phi1,phi2");
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = madapt(&["run", "--problem", "hires", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn invalid_values_are_usage_errors() {
    for args in [
        vec!["run", "--problem", "nonsense"],
        vec!["run", "--problem", "test-equation", "--tol", "-1"],
        vec!["run", "--problem", "test-equation", "--q", "0"],
        vec!["run", "--problem", "heat1d", "--h", "0.7"],
        vec!["run", "--problem", "test-equation", "--ordering", "random"],
    ] {
        let o = madapt(&args);
        assert_eq!(o.status.code(), Some(1), "{args:?}: {}", stderr(&o));
        assert!(stderr(&o).contains("error"), "{args:?}");
    }
}

#[test]
fn missing_subcommand_and_help() {
    assert_eq!(madapt(&[]).status.code(), Some(1));
    let help = madapt(&["--help"]);
    assert_eq!(help.status.code(), Some(0));
    for sub in ["run", "bench", "converge", "dual"] {
        assert!(stdout(&help).contains(sub));
    }
}
