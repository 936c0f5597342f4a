use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn reservoir(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_reservoir")).args(args).output().expect("binary runs")
}

fn qubit(name: &str, points: usize) -> String {
    format!(
        r#"{{
  "name": "{name}",
  "target": {{"kind": "qubit", "c0": [1.0, 0.0], "c1": [1.0, 0.0]}},
  "physical": {{"gamma_mhz": 4.0, "eta": 0.2, "omega1_mhz": 2.0}},
  "environment": {{"kind": "thermal", "gamma_mhz": 0.0001, "n_thermal": 10.0}},
  "truncation": 8,
  "grid": {{"t_max_us": 20.0, "points": {points}}}
}}"#
    )
}

fn write(dir: &Path, file: &str, text: &str) -> PathBuf {
    let p = dir.join(file);
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn has_null(v: &serde_json::Value) -> bool {
    match v {
        serde_json::Value::Null => true,
        serde_json::Value::Array(a) => a.iter().any(has_null),
        serde_json::Value::Object(o) => o.values().any(has_null),
        _ => false,
    }
}

#[test]
fn run_writes_report_and_series() {
    let tmp = TempDir::new().unwrap();
    let file = write(tmp.path(), "q.json", &qubit("q", 5));
    let out = tmp.path().join("out");
    let o = reservoir(&["--out-dir", s(&out), "run", s(&file)]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stdout).contains("steady F"));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("q/report.json")).unwrap()).unwrap();
    assert!(report["audit"]["max_trace_drift"].is_number());
    assert!(report["audit"]["min_eigenvalue"].is_number());
    assert!(report["comparison"]["max_trace_distance"].is_number());
    assert_eq!(report["truncation"], 8);
    // non-finite numbers would serialize as null
    assert!(!has_null(&report));
    let full = fs::read_to_string(out.join("q/timeseries_full.csv")).unwrap();
    assert!(full.starts_with("t_us,fidelity,target_fidelity,excited_population,trace_drift,min_eigenvalue\n"));
    assert_eq!(full.lines().count(), 6);
    // pure initial state: F(0) = 1
    let first: Vec<&str> = full.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(first[0], "0.000000000000e0");
    assert_eq!(first[1], "1.000000000000e0");
    assert!(out.join("q/timeseries_reduced.csv").exists());
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let file = write(tmp.path(), "q.json", &qubit("q", 7));
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for out in [&a, &b] {
        assert_eq!(reservoir(&["--quiet", "--out-dir", s(out), "run", s(&file)]).status.code(), Some(0));
    }
    for name in ["report.json", "timeseries_full.csv", "timeseries_reduced.csv"] {
        assert_eq!(fs::read(a.join("q").join(name)).unwrap(), fs::read(b.join("q").join(name)).unwrap(), "{name}");
    }
}

#[test]
fn single_point_grid_gives_two_line_files() {
    let tmp = TempDir::new().unwrap();
    let file = write(tmp.path(), "one.json", &qubit("one", 1));
    let out = tmp.path().join("out");
    assert_eq!(reservoir(&["-q", "--out-dir", s(&out), "run", s(&file)]).status.code(), Some(0));
    for name in ["timeseries_full.csv", "timeseries_reduced.csv"] {
        let text = fs::read_to_string(out.join("one").join(name)).unwrap();
        assert_eq!(text.lines().count(), 2, "{name}");
        assert!(text.ends_with('\n'));
    }
}

#[test]
fn exit_codes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    // validation: cat with the full model
    let cat = write(
        tmp.path(),
        "cat.json",
        r#"{"name": "cat", "target": {"kind": "cat", "alpha": [1.7, 0.0]}, "model": "full",
            "physical": {"gamma_mhz": 4.0, "eta": 0.2, "omega1_mhz": 2.0},
            "grid": {"t_max_us": 1.0, "points": 2}}"#,
    );
    let o = reservoir(&["--out-dir", s(&out), "run", s(&cat)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("open problem"));
    // parse error names the path
    let bad = write(tmp.path(), "bad.json", &qubit("bad", 3).replace("\"points\": 3", "\"points\": \"many\""));
    let o = reservoir(&["--out-dir", s(&out), "run", s(&bad)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("grid.points"));
    // numerical: a target the three-laser design cannot realize
    let zero = write(tmp.path(), "zero.json", &qubit("zero", 3).replace("\"c1\": [1.0, 0.0]", "\"c1\": [0.0, 0.0]"));
    let o = reservoir(&["--out-dir", s(&out), "run", s(&zero)]);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("design"));
    // i/o
    let missing = tmp.path().join("missing.json");
    assert_eq!(reservoir(&["--out-dir", s(&out), "run", s(&missing)]).status.code(), Some(4));
}

#[test]
fn batch_runs_concurrently_into_separate_directories() {
    let tmp = TempDir::new().unwrap();
    let a = write(tmp.path(), "a.json", &qubit("a", 3));
    let b = write(tmp.path(), "b.json", &qubit("b", 3));
    let out = tmp.path().join("out");
    let o = reservoir(&["--out-dir", s(&out), "run", "--jobs", "2", s(&a), s(&b)]);
    assert_eq!(o.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&o.stdout);
    let lines: Vec<&str> = stdout.lines().collect();
    assert!(lines[0].starts_with("a:") && lines[1].starts_with("b:"), "{stdout}");
    assert!(out.join("a/report.json").exists() && out.join("b/report.json").exists());
}

#[test]
fn truncation_override_reaches_the_report() {
    let tmp = TempDir::new().unwrap();
    let file = write(tmp.path(), "q.json", &qubit("q", 2));
    let out = tmp.path().join("out");
    let o = reservoir(&["--truncation-override", "6", "--out-dir", s(&out), "run", s(&file)]);
    assert_eq!(o.status.code(), Some(0));
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("q/report.json")).unwrap()).unwrap();
    assert_eq!(report["truncation"], 6);
}

#[test]
fn steady_design_and_verify_subcommands() {
    let tmp = TempDir::new().unwrap();
    let file = write(tmp.path(), "q.json", &qubit("q", 2));
    let o = reservoir(&["steady", s(&file)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("multiplicity        1"));

    let o = reservoir(&["design", s(&file)]);
    assert_eq!(o.status.code(), Some(0));
    let table = String::from_utf8_lossy(&o.stdout).to_string();
    assert!(table.contains("red sideband") && table.contains("carrier x") && table.contains("carrier y"));
    assert!(table.contains("Γ_eng = 4.000000e-2 MHz"), "{table}");

    let o = reservoir(&["verify", "--instances", "10"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).trim_end().ends_with("PASS"));
}
