use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

fn imflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_imflow"))
        .args(args)
        .env_remove("IMFLOW_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

/// Copy of a bundled scenario with one textual substitution.
fn variant(dir: &Path, name: &str, from: &str, to: &str) -> PathBuf {
    let text = fs::read_to_string(scenario(name)).unwrap();
    assert!(text.contains(from), "{from} not in {name}");
    let path = dir.join(name);
    fs::write(&path, text.replace(from, to)).unwrap();
    path
}

fn last_row(csv: &Path) -> (Vec<String>, Vec<f64>, usize) {
    let text = fs::read_to_string(csv).unwrap();
    let mut lines = text.lines();
    let header: Vec<String> = lines.next().unwrap().split(',').map(String::from).collect();
    let rows: Vec<&str> = lines.collect();
    let last = rows.last().unwrap().split(',').map(|v| v.parse().unwrap()).collect();
    (header, last, rows.len())
}

#[test]
fn validate_accepts_lq_ring() {
    let out = imflow(&["validate", scenario("ring_lq.json").to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stdout(&out));
}

#[test]
fn validate_flags_unbalanced_supply() {
    let dir = tempfile::tempdir().unwrap();
    let p = variant(dir.path(), "ring_lq.json", "[0, -1]]", "[0, 0]]");
    let out = imflow(&["validate", p.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(stdout(&out).contains("supply not balanced"));
}

#[test]
fn validate_flags_non_skew_exosystem() {
    let dir = tempfile::tempdir().unwrap();
    let p = variant(dir.path(), "ring_lq.json", "[[0, 1], [-1, 0]]", "[[0, 1], [1, 0]]");
    assert_eq!(code(&imflow(&["validate", p.to_str().unwrap()])), 1);
}

#[test]
fn parse_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let broken = dir.path().join("broken.json");
    fs::write(&broken, "{ \"graph\": ").unwrap();
    assert_eq!(code(&imflow(&["validate", broken.to_str().unwrap()])), 2);
    let unknown = variant(dir.path(), "ring_lq.json", "\"seed\": 2", "\"seed\": 2, \"speed\": 1");
    assert_eq!(code(&imflow(&["validate", unknown.to_str().unwrap()])), 2);
    let missing = dir.path().join("nope.json");
    assert_eq!(code(&imflow(&["run", missing.to_str().unwrap()])), 2);
}

#[test]
fn run_writes_csv_and_report_into_new_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("a/b");
    let out = imflow(&[
        "run",
        scenario("ring_routing.json").to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0);
    let (header, last, rows) = last_row(&out_dir.join("ring_routing.csv"));
    assert_eq!(rows, 101);
    assert_eq!(&header[..3], ["t", "w_1", "w_2"]);
    let col = |name: &str| header.iter().position(|h| h == name).unwrap();
    assert!(last[col("agreement_error")] <= 1e-3);
    assert_eq!(last[col("t")], 100.0);

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out_dir.join("ring_routing.report.json")).unwrap()).unwrap();
    assert_eq!(report["diverged"], false);
    assert!(report["dissipation_max_violation"].as_f64().unwrap() <= 1e-4);
}

#[test]
fn overrides_and_environment_directory() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_imflow"))
        .args(["run", scenario("ring_lq.json").to_str().unwrap(), "--horizon", "2", "--dt", "0.01"])
        .env("IMFLOW_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    // record_every = 1000 steps of 0.01 exceeds the horizon: first and final rows only
    let (_, last, rows) = last_row(&dir.path().join("ring_lq.csv"));
    assert_eq!(rows, 2);
    assert!((last[0] - 2.0).abs() < 1e-12);
}

#[test]
fn divergence_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let out = imflow(&[
        "run",
        scenario("ring_routing.json").to_str().unwrap(),
        "--dt",
        "5",
        "--horizon",
        "5000",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("ring_routing.report.json")).unwrap()).unwrap();
    assert_eq!(report["diverged"], true);
}

#[test]
fn oracle_comparisons() {
    for name in ["ring_lq.json", "tree_oracle.json", "quartic_bregman.json", "constant_bregman.json"] {
        let out = imflow(&["oracle", scenario(name).to_str().unwrap()]);
        assert_eq!(code(&out), 0, "{name}: {}", stdout(&out));
    }
    let out = imflow(&["oracle", scenario("oscillators_edge_im.json").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn regulator_reports_feasibility() {
    let out = imflow(&["regulator", scenario("ring_routing.json").to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    assert!(stdout(&out).contains("rank feasibility: pass"));
    let out = imflow(&["regulator", scenario("oscillators_edge_im.json").to_str().unwrap()]);
    assert_eq!(code(&out), 0);
    let out = imflow(&["regulator", scenario("cubic_gradient.json").to_str().unwrap()]);
    assert_eq!(code(&out), 2);
}

#[test]
fn batch_runs_every_scenario() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["constant_bregman.json", "tree_oracle.json"] {
        let text = fs::read_to_string(scenario(name)).unwrap();
        fs::write(dir.path().join(name), text).unwrap();
    }
    let out = imflow(&["run", "--batch", dir.path().to_str().unwrap(), "--horizon", "5"]);
    assert_eq!(code(&out), 0);
    assert!(dir.path().join("constant_bregman.csv").exists());
    assert!(dir.path().join("tree_oracle.report.json").exists());
}
