use std::path::PathBuf;
use std::process::{Command, Output};

use serde_json::Value;

fn taumom(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taumom"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn temp_file(name: &str, text: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("taumom-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn default_verify_passes_with_many_checks() {
    let o = taumom(&["verify", "--no-timestamps"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.len() >= 40, "{}", checks.len());
    assert!(checks.iter().all(|c| c["pass"] == true));
    assert_eq!(report["summary"]["failed"], 0);
    assert!(report.get("generated_at").is_none());
}

#[test]
fn zero_tolerance_fails() {
    let o = taumom(&["verify", "--tolerance", "0", "--no-timestamps"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn corrupt_configs_exit_with_two() {
    for text in ["{\"seed\": ", "{\"verify\": {\"mops\": \"many\"}}", "{\"colour\": \"red\"}"] {
        let path = temp_file("corrupt.json", text);
        let o = taumom(&["verify", "--config", path.to_str().unwrap()]);
        assert_eq!(code(&o), 2, "{text}");
        assert!(String::from_utf8_lossy(&o.stderr).contains("invalid configuration"));
    }
    let o = taumom(&["verify", "--config", "/nonexistent/config.json"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn degenerate_tau_exits_with_three() {
    let path = temp_file(
        "narrow.json",
        r#"{"polys": {"preset": "gue", "n": "9", "times": {"s": [[]], "t": [["0", "-500"]]}}}"#,
    );
    let o = taumom(&["polys", "--config", path.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("degenerate tau"));
}

#[test]
fn gue_cubic_coefficients() {
    let o = taumom(&["polys", "gue", "--n", "3", "--format", "csv"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("kind,beta_or_alpha,component,c0,c1,c2,c3"));
    assert!(text.lines().any(|l| l == "type_ii,1,1,0,-3,0,1"), "{text}");
}

#[test]
fn whole_line_probability_is_one() {
    let o = taumom(&["prob", "--whole-line"]);
    assert_eq!(code(&o), 0);
    let out: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(out["result"]["probability"].as_f64(), Some(1.0));
    let o = taumom(&["prob", "--whole-line", "--format", "csv"]);
    assert!(stdout(&o).lines().nth(1).unwrap().ends_with(",1"));
}

#[test]
fn circle_scenario_reports_unit_taus() {
    let o = taumom(&["scenario", "circle", "--no-timestamps"]);
    assert_eq!(code(&o), 0);
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let unit: Vec<&Value> = report["checks"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|c| c["id"] == "circle_tau_unit")
        .collect();
    assert!(!unit.is_empty());
    assert!(unit.iter().all(|c| c["pass"] == true));
}

#[test]
fn reports_are_byte_identical_without_timestamps() {
    let a = taumom(&["verify", "--no-timestamps", "--seed", "9", "--jobs", "1"]);
    let b = taumom(&["verify", "--no-timestamps", "--seed", "9", "--jobs", "3"]);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
    let c = taumom(&["verify", "--no-timestamps", "--seed", "10"]);
    assert_ne!(a.stdout, c.stdout);
    let stamped = taumom(&["verify", "--seed", "9"]);
    let report: Value = serde_json::from_slice(&stamped.stdout).unwrap();
    assert!(report["generated_at"].is_string());
}

#[test]
fn csv_report_and_out_file() {
    let out = std::env::temp_dir().join(format!("taumom-cli-{}-report.csv", std::process::id()));
    let o = taumom(&[
        "scenario",
        "gue",
        "--format",
        "csv",
        "--no-timestamps",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert!(o.stdout.is_empty());
    let text = std::fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("id,inputs_digest,residual,tolerance,pass\n"));
    assert!(text.lines().any(|l| l.starts_with("gue_hermite,")));
}

#[test]
fn decimal_string_config_drives_the_run() {
    let path = temp_file(
        "small.json",
        r#"{"seed": "4", "tolerance": "1e-6", "truncation": "6",
            "verify": {"mops": "2", "cauchy": "2", "bilinear": "3", "pde": "1", "presets": false}}"#,
    );
    let o = taumom(&["verify", "--config", path.to_str().unwrap(), "--no-timestamps"]);
    assert_eq!(code(&o), 0);
    let report: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let checks = report["checks"].as_array().unwrap();
    assert!(checks.iter().all(|c| c["tolerance"].as_f64() == Some(1e-6)));
    assert_eq!(checks.iter().filter(|c| c["id"] == "bilinear_tau").count(), 3);
}
