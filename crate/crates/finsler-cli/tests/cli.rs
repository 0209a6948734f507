//! End-to-end tests of the scenario driver binary: exit codes, report
//! files, output-directory precedence, and the validate subcommand.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn scenario_file(dir: &Path, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path
}

/// Runs the driver with FINSLER_OUT scrubbed so the ambient environment
/// cannot leak into output-directory resolution.
fn finsler(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_finsler"));
    cmd.args(args).env_remove("FINSLER_OUT");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

const TINY_EUCLIDEAN: &str = r#"
seed = 7

[metric]
family = "euclidean"
dim = 2

[[tasks]]
kind = "verify-core"
samples = 8
"#;

#[test]
fn passing_scenario_exits_zero_and_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let file = scenario_file(tmp.path(), "tiny.toml", TINY_EUCLIDEAN);
    let out_dir = tmp.path().join("reports");
    let out = finsler(&["run", file.to_str().unwrap(), "--out", out_dir.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(0), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("[1] verify-core: pass"), "stdout: {stdout}");
    let report = fs::read_to_string(out_dir.join("01-verify-core.toml")).unwrap();
    assert!(report.starts_with("task = \"verify-core\"\nstatus = \"pass\"\n"));
    assert!(report.contains("samples = 8"));
}

#[test]
fn parse_error_exits_two_with_line_and_column() {
    let tmp = tempfile::tempdir().unwrap();
    let file = scenario_file(
        tmp.path(),
        "broken.toml",
        "seed = 7\n[metric\nfamily = \"euclidean\"\n",
    );
    let out = finsler(&["run", file.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("line 2"), "stderr: {stderr}");
    assert!(stderr.contains("column"), "stderr: {stderr}");
}

#[test]
fn missing_file_exits_two() {
    let out = finsler(&["run", "/nonexistent/scenario.toml"], &[]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("cannot read"));
}

#[test]
fn invalid_metric_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let file = scenario_file(
        tmp.path(),
        "fat-drift.toml",
        r#"
seed = 7

[metric]
family = "randers"
a = { kind = "constant", rows = [[1.0, 0.0], [0.0, 1.0]] }
b = { kind = "constant", components = [1.2, 0.0] }

[[tasks]]
kind = "verify-core"
"#,
    );
    let out = finsler(&["run", file.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("strongly convex"), "stderr: {stderr}");
}

#[test]
fn szabo_on_a_non_berwald_metric_is_degenerate_and_exits_one() {
    let tmp = tempfile::tempdir().unwrap();
    let file = scenario_file(
        tmp.path(),
        "drift-szabo.toml",
        r#"
seed = 7

[metric]
family = "randers"
a = { kind = "constant", rows = [[1.0, 0.0], [0.0, 1.0]] }
b = { kind = "affine", constant = [0.3, 0.0], linear = [[0.0, 0.1], [0.0, 0.0]] }

[[tasks]]
kind = "szabo"
"#,
    );
    let out_dir = tmp.path().join("reports");
    let out = finsler(&["run", file.to_str().unwrap(), "--out", out_dir.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("[1] szabo: degenerate"), "stdout: {stdout}");
    let report = fs::read_to_string(out_dir.join("01-szabo.toml")).unwrap();
    assert!(report.contains("status = \"degenerate\""));
    assert!(report.contains("berwald_residual"));
}

#[test]
fn out_dir_falls_back_to_the_environment_variable() {
    let tmp = tempfile::tempdir().unwrap();
    let file = scenario_file(tmp.path(), "tiny.toml", TINY_EUCLIDEAN);
    let env_dir = tmp.path().join("from-env");
    let out = finsler(
        &["run", file.to_str().unwrap()],
        &[("FINSLER_OUT", env_dir.to_str().unwrap())],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(env_dir.join("01-verify-core.toml").exists());
}

#[test]
fn out_flag_wins_over_the_environment_variable() {
    let tmp = tempfile::tempdir().unwrap();
    let file = scenario_file(tmp.path(), "tiny.toml", TINY_EUCLIDEAN);
    let env_dir = tmp.path().join("from-env");
    let flag_dir = tmp.path().join("from-flag");
    let out = finsler(
        &["run", file.to_str().unwrap(), "--out", flag_dir.to_str().unwrap()],
        &[("FINSLER_OUT", env_dir.to_str().unwrap())],
    );
    assert_eq!(out.status.code(), Some(0));
    assert!(flag_dir.join("01-verify-core.toml").exists());
    assert!(!env_dir.exists());
}

#[test]
fn seed_override_changes_the_sampled_witnesses() {
    let tmp = tempfile::tempdir().unwrap();
    let file = scenario_file(tmp.path(), "tiny.toml", TINY_EUCLIDEAN);
    let dir_a = tmp.path().join("a");
    let dir_b = tmp.path().join("b");
    for (dir, seed) in [(&dir_a, "1"), (&dir_b, "2")] {
        let out = finsler(
            &["run", file.to_str().unwrap(), "--out", dir.to_str().unwrap(), "--seed", seed],
            &[],
        );
        assert_eq!(out.status.code(), Some(0));
    }
    let a = fs::read_to_string(dir_a.join("01-verify-core.toml")).unwrap();
    let b = fs::read_to_string(dir_b.join("01-verify-core.toml")).unwrap();
    assert_ne!(a, b);
}

#[test]
fn validate_prints_nothing_for_a_well_formed_scenario() {
    let tmp = tempfile::tempdir().unwrap();
    let file = scenario_file(tmp.path(), "tiny.toml", TINY_EUCLIDEAN);
    let out = finsler(&["validate", file.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(0));
    assert!(out.stdout.is_empty(), "stdout: {}", String::from_utf8_lossy(&out.stdout));
}

#[test]
fn validate_reports_convexity_violations_and_still_exits_zero() {
    let tmp = tempfile::tempdir().unwrap();
    let file = scenario_file(
        tmp.path(),
        "fat-drift.toml",
        r#"
seed = 7

[metric]
family = "randers"
a = { kind = "constant", rows = [[1.0, 0.0], [0.0, 1.0]] }
b = { kind = "constant", components = [1.2, 0.0] }

[[tasks]]
kind = "verify-core"
"#,
    );
    let out = finsler(&["validate", file.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("strongly convex"), "stdout: {stdout}");
}

#[test]
fn validate_reports_parse_errors_with_position() {
    let tmp = tempfile::tempdir().unwrap();
    let file = scenario_file(tmp.path(), "broken.toml", "seed = \"not a number\"\n");
    let out = finsler(&["validate", file.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("line 1"), "stdout: {stdout}");
}

#[test]
fn unknown_task_names_the_offending_key() {
    let tmp = tempfile::tempdir().unwrap();
    let file = scenario_file(
        tmp.path(),
        "typo.toml",
        r#"
seed = 7

[metric]
family = "euclidean"
dim = 2

[[tasks]]
kind = "verify-cores"
"#,
    );
    let out = finsler(&["run", file.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("verify-cores") || stderr.contains("unknown variant"), "{stderr}");
}
