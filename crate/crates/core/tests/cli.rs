use std::path::Path;
use std::process::{Command, Output};

fn mimo_ee(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mimo-ee"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

#[test]
fn sweep_rf_writes_documented_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("rf");
    let run = mimo_ee(&[
        "sweep-rf",
        "--trials",
        "8",
        "--values",
        "0.5,1,3",
        "--out",
        path(&out),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let csv = std::fs::read_to_string(out.join("sweep-rf.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with(
        "rf_var,mean_ee_proposed,std_ee_proposed,mean_ee_equal,std_ee_equal,n,rejected"
    ));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("5.0000000000000000e-1,"));
    assert!(!csv.contains('\r'));

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "sweep-rf");
    assert_eq!(manifest["outputs"], serde_json::json!(["sweep-rf.csv"]));
    assert_eq!(manifest["values"], serde_json::json!([0.5, 1.0, 3.0]));
    assert_eq!(manifest["config"]["antennas"], 100);
}

#[test]
fn rerun_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let run = mimo_ee(&[
            "monte-carlo",
            "--trials",
            "12",
            "--seed",
            "5",
            "--out",
            path(out),
        ]);
        assert!(run.status.success());
    }
    let read = |d: &Path| std::fs::read(d.join("monte-carlo.csv")).unwrap();
    assert_eq!(read(&a), read(&b));
}

#[test]
fn manifest_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("first");
    let cfg = dir.path().join("cfg.toml");
    std::fs::write(&cfg, "antennas = 32\nr_min = 1.5\n").unwrap();
    let run = mimo_ee(&[
        "compare-baseline",
        "--config",
        path(&cfg),
        "--trials",
        "6",
        "--out",
        path(&first),
    ]);
    assert!(run.status.success());

    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(first.join("manifest.json")).unwrap())
            .unwrap();
    let snapshot = dir.path().join("snapshot.toml");
    std::fs::write(&snapshot, manifest["config_toml"].as_str().unwrap()).unwrap();
    let second = dir.path().join("second");
    let run = mimo_ee(&[
        "compare-baseline",
        "--config",
        path(&snapshot),
        "--trials",
        "6",
        "--out",
        path(&second),
    ]);
    assert!(run.status.success());
    let read = |d: &Path| std::fs::read(d.join("compare-baseline.csv")).unwrap();
    assert_eq!(read(&first), read(&second));
}

#[test]
fn invalid_config_exits_nonzero_naming_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "coherence_interval = 4.0\npilot_length = 6.0\n").unwrap();
    let run = mimo_ee(&[
        "solve-once",
        "--config",
        path(&cfg),
        "--out",
        path(dir.path()),
    ]);
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("pilot_length"));

    std::fs::write(&cfg, "pilot_lenght = 2.0\n").unwrap();
    let run = mimo_ee(&[
        "solve-once",
        "--config",
        path(&cfg),
        "--out",
        path(dir.path()),
    ]);
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("pilot_lenght"));
}

#[test]
fn unsorted_sweep_values_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let run = mimo_ee(&[
        "sweep-rmin",
        "--values",
        "2,1",
        "--trials",
        "2",
        "--out",
        path(dir.path()),
    ]);
    assert!(!run.status.success());
    assert!(String::from_utf8_lossy(&run.stderr).contains("sorted"));
}

#[test]
fn oracle_check_prints_gap() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("k2.toml");
    std::fs::write(
        &cfg,
        "users = 2\nantennas = 8\npilot_length = 2.0\ncoherence_interval = 3.0\n",
    )
    .unwrap();
    let run = mimo_ee(&[
        "oracle-check",
        "--config",
        path(&cfg),
        "--trials",
        "2",
        "--grid",
        "60",
        "--out",
        path(dir.path()),
    ]);
    assert!(
        run.status.success(),
        "{}",
        String::from_utf8_lossy(&run.stderr)
    );
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert_eq!(stdout.matches("relative gap").count(), 2);
    let csv = std::fs::read_to_string(dir.path().join("oracle-check.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
}

#[test]
fn solve_once_reports_every_user() {
    let dir = tempfile::tempdir().unwrap();
    let run = mimo_ee(&["solve-once", "--seed", "3", "--out", path(dir.path())]);
    assert!(run.status.success());
    let csv = std::fs::read_to_string(dir.path().join("solve-once.csv")).unwrap();
    assert_eq!(csv.lines().count(), 5);
    assert!(csv
        .lines()
        .skip(1)
        .all(|l| l.contains(",center,") || l.contains(",edge,")));
}
