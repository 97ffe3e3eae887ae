//! End-to-end checks of the binary: artifacts on disk, exit codes, and
//! error messages.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn tlbc(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tlbc"))
        .args(args)
        .args(["--out", dir.to_str().unwrap()])
        .output()
        .expect("spawn tlbc")
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

#[test]
fn characteristic_writes_the_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = tlbc(
        &["characteristic", "--from", "0.0", "--to", "0.5", "--steps", "6"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let csv = fs::read_to_string(dir.path().join("characteristic.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("d,v_o"));
    assert_eq!(lines.count(), 6);
    // The d = 0.2 row sits near the 15 V design point.
    let row = csv
        .lines()
        .find(|l| l.starts_with("0.200000"))
        .expect("grid row at 0.2");
    let v: f64 = row.split(',').nth(1).unwrap().parse().unwrap();
    assert!((v - 15.0).abs() < 0.3, "v_o at d=0.2 was {v}");
}

#[test]
fn run_builtin_emits_csv_and_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let out = tlbc(&["run", "fig7_s1", "--svg"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));

    let csv = fs::read_to_string(dir.path().join("fig7_s1.csv")).unwrap();
    assert!(csv.starts_with("t_s,v_in,v_ref,duty,i_l,v_c1,v_c2,v_o,kp_active,ki_active\n"));
    // 0.5 s at 32 kHz control rate.
    assert_eq!(csv.lines().count(), 16_001);

    let metrics = fs::read_to_string(dir.path().join("fig7_s1_metrics.txt")).unwrap();
    assert!(metrics.contains("scenario fig7_s1"));
    assert_eq!(metrics.matches("event t =").count(), 3);
    assert!(!metrics.contains("NOT SETTLED"));

    let svg = fs::read_to_string(dir.path().join("fig7_s1.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("event t = 0.360"));
}

#[test]
fn run_custom_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pulse.toml");
    fs::write(
        &path,
        r#"
            t_end = 0.02
            initial = "zero"

            [controller]
            kind = "open_loop"
            duty = [[0.0, 0.2], [0.01, 0.4]]

            [schedules]
            v_in = 12.0
        "#,
    )
    .unwrap();
    let out = tlbc(&["run", path.to_str().unwrap()], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    // Named by file stem; 640 control periods.
    let csv = fs::read_to_string(dir.path().join("pulse.csv")).unwrap();
    assert_eq!(csv.lines().count(), 641);
    let last = csv.lines().last().unwrap();
    let duty: f64 = last.split(',').nth(3).unwrap().parse().unwrap();
    assert_eq!(duty, 0.4);
}

#[test]
fn unknown_scenario_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tlbc(&["run", "fig99"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let msg = stderr(&out);
    assert!(msg.contains("fig99") && msg.contains("fig7_s1"), "{msg}");
}

#[test]
fn unknown_toml_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("typo.toml");
    fs::write(
        &path,
        r#"
            t_end = 0.02
            [controller]
            kind = "fixed_pi"
            kp = 1e-6
            ki = 1e6
            [schedules]
            v_in = 12.0
            v_ref = 15.0
            [converter]
            indutance = 1e-3
        "#,
    )
    .unwrap();
    let out = tlbc(&["run", path.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("indutance"), "{}", stderr(&out));
}

#[test]
fn bad_override_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tlbc(&["run", "fig7_s1", "--set", "bogus=1.0"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("bogus"));

    let out = tlbc(&["run", "fig7_s1", "--set", "r_load"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("key=value"));
}

#[test]
fn single_fit_report_has_model_and_quality() {
    let dir = tempfile::tempdir().unwrap();
    let out = tlbc(
        &[
            "identify",
            "--subinterval",
            "S1",
            "--channel",
            "input",
            "--poles",
            "3",
            "--zeros",
            "0",
        ],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("fit "), "{stdout}");
    assert!(stdout.contains("num:") && stdout.contains("den:"), "{stdout}");
    assert!(dir.path().join("identify.txt").exists());
}

#[test]
fn identify_without_scope_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = tlbc(&["identify"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("--subinterval"), "{}", stderr(&out));
}
