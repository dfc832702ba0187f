//! Exit codes, output shape and determinism of the command-line tool.

use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sns-keyrate")).args(args).current_dir(dir).output().expect("spawn")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).expect("utf-8")
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().expect("header").split(',').collect();
    let k = header.iter().position(|h| *h == name).expect("column");
    lines.map(|l| l.split(',').nth(k).expect("field").to_string()).collect()
}

fn rate(csv: &str) -> f64 {
    column(csv, "rate")[0].parse().expect("rate")
}

fn tmp() -> tempfile::TempDir {
    tempfile::tempdir().expect("tempdir")
}

#[test]
fn two_modes_at_170_km_give_positive_rate() {
    let d = tmp();
    let o = run(d.path(), &["rate", "--row", "A", "--distance-km", "170", "--m", "2"]);
    assert_eq!(code(&o), 0);
    assert!(rate(&stdout(&o)) > 0.0);
}

#[test]
fn far_distance_gives_zero_rate_and_success() {
    let d = tmp();
    let o = run(d.path(), &["rate", "--row", "A", "--distance-km", "600"]);
    assert_eq!(code(&o), 0);
    assert_eq!(rate(&stdout(&o)), 0.0);
}

#[test]
fn repeated_invocation_is_byte_identical() {
    let d = tmp();
    let args = ["rate", "--row", "C", "--distance-km", "300", "--m", "2", "--budget", "200", "--seed", "7"];
    let a = run(d.path(), &args);
    let b = run(d.path(), &args);
    assert_eq!(code(&a), 0);
    assert_eq!(a.stdout, b.stdout);
}

#[test]
fn empty_mode_list_is_rejected() {
    let d = tmp();
    let o = run(d.path(), &["scan", "--distance-km", "100,200", "--m", ""]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("no modes requested"));
}

#[test]
fn scan_writes_csv_manifest_and_trace_atomically() {
    let d = tmp();
    let o = run(d.path(), &["scan", "--row", "A", "--distance-km", "100:120:10", "--m", "1,2", "--budget", "100", "--out", "s.csv"]);
    assert_eq!(code(&o), 0);
    let csv = std::fs::read_to_string(d.path().join("s.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 6);
    assert_eq!(column(&csv, "m"), ["1", "1", "1", "2", "2", "2"]);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.path().join("s.csv.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "scan");
    assert_eq!(manifest["seed"], 1);
    assert!(manifest["rng_algorithm"].is_string() && manifest["software_version"].is_string());
    assert!(manifest["failure_budget_spent"].as_f64().unwrap() > 0.0);
    assert!(d.path().join("s.csv.trace.csv").exists());
    // only the three outputs remain; no temporary files
    assert_eq!(std::fs::read_dir(d.path()).unwrap().count(), 3);
}

#[test]
fn rerun_reproduces_scan() {
    let d = tmp();
    let o = run(d.path(), &["scan", "--row", "C", "--distance-km", "250,300", "--m", "2", "--budget", "150", "--out", "a.csv"]);
    assert_eq!(code(&o), 0);
    let o = run(d.path(), &["rerun", "--manifest", "a.csv.manifest.json", "--out", "b.csv"]);
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read(d.path().join("a.csv")).unwrap(), std::fs::read(d.path().join("b.csv")).unwrap());
}

#[test]
fn validate_passes_at_four_sigma_and_fails_at_zero() {
    let d = tmp();
    let ok = run(d.path(), &["validate", "--row", "A", "--distance-km", "50", "--m", "2", "--trials", "1000000"]);
    assert_eq!(code(&ok), 0);
    assert_eq!(stdout(&ok).lines().count(), 1, "only the header for an empty report");
    let strict = run(d.path(), &["validate", "--row", "A", "--distance-km", "50", "--m", "2", "--trials", "100000", "--sigma", "0"]);
    assert_eq!(code(&strict), 1);
    assert!(stdout(&strict).lines().count() > 1);
}

#[test]
fn zero_trials_is_a_usage_error() {
    let d = tmp();
    assert_eq!(code(&run(d.path(), &["validate", "--trials", "0"])), 2);
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let d = tmp();
    assert_eq!(code(&run(d.path(), &["rate", "--bogus"])), 2);
}

#[test]
fn invalid_config_reports_violations() {
    let d = tmp();
    let init = run(d.path(), &["init-config", "--row", "A", "--m", "2"]);
    assert_eq!(code(&init), 0);
    let text = stdout(&init).replace("p_v = 7e-1", "p_v = 2").replace("mu_y = 5.4e-1", "mu_y = 1e-2");
    std::fs::write(d.path().join("bad.cfg"), text).unwrap();
    let o = run(d.path(), &["rate", "--config", "bad.cfg"]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("p_v") && err.contains("mu"), "{err}");
}

#[test]
fn config_file_round_trips_through_init_config() {
    let d = tmp();
    let init = run(d.path(), &["init-config", "--row", "C", "--m", "6", "--out", "c.cfg"]);
    assert_eq!(code(&init), 0);
    let from_file = run(d.path(), &["rate", "--config", "c.cfg", "--distance-km", "300"]);
    let from_row = run(d.path(), &["rate", "--row", "C", "--m", "6", "--distance-km", "300"]);
    assert_eq!(code(&from_file), 0);
    assert_eq!(from_file.stdout, from_row.stdout);
}

#[test]
fn table2_carries_repeaterless_bound_and_reference_row() {
    let d = tmp();
    let o = run(d.path(), &["table2", "--budget", "50"]);
    assert_eq!(code(&o), 0);
    let csv = stdout(&o);
    assert_eq!(csv.lines().count(), 1 + 6);
    let plob = csv.lines().find(|l| l.starts_with("PLOB-2,")).unwrap();
    let at_300: f64 = plob.split(',').nth(3).unwrap().parse().unwrap();
    assert_eq!(format!("{at_300:.2e}"), "1.44e-6");
    assert!(csv.lines().any(|l| l.starts_with("AOPP,") && l.ends_with("\"reference, not computed\"")));
}
