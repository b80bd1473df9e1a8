use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use mixgame_cli::config::ExperimentConfig;
use serde_json::Value;
use sha2::{Digest, Sha256};

fn mixgame(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixgame"))
        .args(args)
        .current_dir(dir)
        .env_remove(mixgame_cli::OUTPUT_DIR_ENV)
        .output()
        .unwrap()
}

fn stdout_json(out: &Output) -> Value {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).unwrap()
}

fn stderr_error(out: &Output) -> Value {
    let v: Value = serde_json::from_slice(&out.stderr).unwrap();
    v["error"].clone()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn csv_column(path: &Path, column: &str) -> Vec<f64> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let k = header.iter().position(|h| *h == column).unwrap();
    lines.map(|l| l.split(',').nth(k).unwrap().parse().unwrap()).collect()
}

#[test]
fn describe_reports_controls_and_audit() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mixgame(&["describe", "--game", "uv", "--out", "d"], tmp.path());
    let v = stdout_json(&out);
    assert_eq!(v["controls_u"], serde_json::json!([[-1.0], [1.0]]));
    assert_eq!(v["declared"]["bound_f"], 1.0);
    assert_eq!(v["regularity_verdict"], "pass");
    assert!(tmp.path().join("d/describe.json").exists());
}

#[test]
fn manifest_hashes_match_files() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mixgame(
        &["solve", "--game", "uv", "--n", "20", "--h", "0.05", "--mode", "mixed,pure_lower,pure_upper", "--out", "s"],
        tmp.path(),
    );
    let summary = stdout_json(&out);
    let dir = tmp.path().join("s");
    let m = manifest(&dir);
    let files: Vec<&str> = m["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|a| a["file"].as_str().unwrap())
        .collect();
    for f in ["config.toml", "field_mixed.csv", "field_pure_lower.csv", "field_pure_upper.csv", "solve_summary.json"] {
        assert!(files.contains(&f), "{f} missing from {files:?}");
    }
    for a in m["artifacts"].as_array().unwrap() {
        let bytes = fs::read(dir.join(a["file"].as_str().unwrap())).unwrap();
        assert_eq!(a["sha256"].as_str().unwrap(), hex::encode(Sha256::digest(&bytes)));
        assert_eq!(a["bytes"].as_u64().unwrap() as usize, bytes.len());
    }
    assert_eq!(m["versions"]["mixgame"], "0.1.0");
    assert!(m["wall_seconds"].as_f64().unwrap() >= 0.0);

    // Pure values bracket the mixed one on every node; the gap is visible.
    let mixed = csv_column(&dir.join("field_mixed.csv"), "value");
    let lower = csv_column(&dir.join("field_pure_lower.csv"), "value");
    let upper = csv_column(&dir.join("field_pure_upper.csv"), "value");
    for k in 0..mixed.len() {
        assert!(lower[k] <= mixed[k] + 1e-9 && mixed[k] <= upper[k] + 1e-9);
    }
    assert!(summary["max_pure_gap_in_region"].as_f64().unwrap() >= 0.2);
}

#[test]
fn echoed_config_reruns_identically() {
    let tmp = tempfile::tempdir().unwrap();
    let first = mixgame(&["solve", "--game", "separable", "--n", "10", "--h", "0.1", "--out", "a"], tmp.path());
    stdout_json(&first);
    let echo = fs::read_to_string(tmp.path().join("a/config.toml")).unwrap();
    let reparsed = ExperimentConfig::from_toml(&echo).unwrap();
    assert_eq!(reparsed.clone().validate().unwrap().config.n, 10);
    let original = manifest(&tmp.path().join("a"));
    assert_eq!(original["config"].as_str().unwrap(), echo);

    // Same config from the echoed file; only the output directory moves.
    let second = mixgame(&["solve", "--config", "a/config.toml", "--out", "a"], tmp.path());
    stdout_json(&second);
    let rerun = manifest(&tmp.path().join("a"));
    assert_eq!(original["artifacts"], rerun["artifacts"]);
}

#[test]
fn converge_reports_decreasing_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let out = mixgame(&["converge", "--game", "separable", "--meshes", "10,40,160", "--out", "c"], tmp.path());
    let v = stdout_json(&out);
    assert_eq!(v["non_increasing"], true);
    let dir = tmp.path().join("c");
    let errors = csv_column(&dir.join("convergence.csv"), "error");
    assert_eq!(errors.len(), 3);
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
    assert!(errors[2] <= 0.05);
    let m = manifest(&dir);
    let timing = m["artifacts"]
        .as_array()
        .unwrap()
        .iter()
        .find(|a| a["file"] == "convergence.csv")
        .unwrap();
    assert_eq!(timing["deterministic"], false);
}

#[test]
fn isaacs_scan_flags_uv() {
    let tmp = tempfile::tempdir().unwrap();
    let v = stdout_json(&mixgame(&["isaacs-scan", "--game", "uv", "--out", "i"], tmp.path()));
    assert_eq!(v["isaacs_violated"], true);
    assert!((v["max_gap"].as_f64().unwrap() - 4.0).abs() < 1e-9);
    let v = stdout_json(&mixgame(&["isaacs-scan", "--game", "separable", "--out", "j"], tmp.path()));
    assert_eq!(v["isaacs_violated"], false);
    let gaps = csv_column(&tmp.path().join("j/isaacs_scan.csv"), "isaacs_gap");
    assert_eq!(gaps.len(), 3 * 9 * 9);
}

#[test]
fn pde_matches_closed_form() {
    let tmp = tempfile::tempdir().unwrap();
    let v = stdout_json(&mixgame(&["pde", "--game", "separable", "--h", "0.02", "--out", "p"], tmp.path()));
    assert!(v["cfl_ratio"].as_f64().unwrap() <= 1.0 + 1e-12);
    assert!(v["closed_form_error_in_region"].as_f64().unwrap() < 0.1);
    assert!(tmp.path().join("p/pde_field.csv").exists());
}

#[test]
fn play_summary() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("play.toml"), "deviations = 2\nexploit_samples = 100\n").unwrap();
    let v = stdout_json(&mixgame(
        &["play", "--config", "play.toml", "--game", "uv", "--n", "10", "--h", "0.1", "--samples", "400", "--x0", "-0.2", "--seed", "3", "--out", "g"],
        tmp.path(),
    ));
    assert_eq!(v["samples"], 400);
    let ci = v["ci"].as_array().unwrap();
    assert!(ci[0].as_f64().unwrap() <= ci[1].as_f64().unwrap());
    assert!(v["exploit"]["worst_advantage"].as_f64().unwrap() < 0.2);
    assert!(tmp.path().join("g/deviations.csv").exists());
}

#[test]
fn game_debug_solves_rock_paper_scissors() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("rps.txt"), "# rock paper scissors\n0 -1 1\n1 0 -1\n-1 1 0\n").unwrap();
    let v = stdout_json(&mixgame(&["game-debug", "rps.txt", "--out", "m"], tmp.path()));
    assert!(v["minimizer_side"]["value"].as_f64().unwrap().abs() < 1e-12);
    assert!(v["side_agreement"].as_f64().unwrap() < 1e-12);
    assert!(v["fictitious_play"]["solution"]["value"].as_f64().unwrap().abs() < 0.01);
    assert!(tmp.path().join("m/game_debug.json").exists());
}

#[test]
fn output_dir_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("cfg.toml"), "[output]\ndir = \"from_file\"\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_mixgame"))
        .args(["describe", "--config", "cfg.toml"])
        .current_dir(tmp.path())
        .env(mixgame_cli::OUTPUT_DIR_ENV, "from_env")
        .output()
        .unwrap();
    stdout_json(&out);
    assert!(tmp.path().join("from_env/manifest.json").exists());
    assert!(!tmp.path().join("from_file").exists());
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("bad.toml"), "grid_size = 4\n").unwrap();
    for args in [
        vec!["solve", "--config", "bad.toml"],
        vec!["solve", "--cfl", "1.5"],
        vec!["describe", "--game", "pong"],
        vec!["solve", "--mode", "mixed,best"],
        vec!["describe", "--config", "missing.toml"],
    ] {
        let out = mixgame(&args, tmp.path());
        assert_eq!(out.status.code(), Some(2), "{args:?}");
        let e = stderr_error(&out);
        assert_eq!(e["kind"], "config");
        assert_eq!(e["exit_code"], 2);
    }
}

#[test]
fn solver_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(
        tmp.path().join("huge.toml"),
        r#"
h = 0.1
[game]
name = "huge"
state_dim = 1
horizon = 1.0
controls_u = [-1.0, 1.0]
controls_v = [-1.0, 1.0]
dynamics = ["u*v"]
terminal = "1e308 * hat(x)"
[game.declared]
bound_f = 1.0
lipschitz_f = 0.0
lipschitz_g = 1e308
bound_g = 1e308
"#,
    )
    .unwrap();
    let out = mixgame(&["pde", "--config", "huge.toml", "--out", "h"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(stderr_error(&out)["kind"], "solver");

    fs::write(tmp.path().join("big.txt"), "1.7e308 -1.7e308\n-1.7e308 1.7e308\n").unwrap();
    let out = mixgame(&["game-debug", "big.txt", "--out", "b"], tmp.path());
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unwritable_output_exits_4() {
    let tmp = tempfile::tempdir().unwrap();
    fs::write(tmp.path().join("file"), "").unwrap();
    let out = mixgame(&["describe", "--out", "file/sub"], tmp.path());
    assert_eq!(out.status.code(), Some(4));
    assert_eq!(stderr_error(&out)["kind"], "internal");
}
