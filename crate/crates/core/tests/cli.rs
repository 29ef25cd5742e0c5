use std::process::{Command, Output};

fn fedsynth(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fedsynth"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

#[test]
fn account_prints_counts() {
    let out = fedsynth(&["account", "--points", "50", "--input-dim", "784", "--num-classes", "10", "--model-params", "1663370"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("floats 39701"), "{text}");
    assert!(text.contains("(2.4%)"), "{text}");

    let out = fedsynth(&[
        "account", "--points", "50", "--input-dim", "784", "--num-classes", "10", "--model-params", "1663370", "--etas", "25",
    ]);
    assert!(String::from_utf8(out.stdout).unwrap().contains("floats 39726"));
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "roundz = 3\n").unwrap();
    let out = fedsynth(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown key"));

    let out = fedsynth(&["run", "--config", dir.path().join("missing.cfg").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.gz");
    let m = missing.to_str().unwrap();
    let out = fedsynth(&[
        "run",
        "--output",
        dir.path().to_str().unwrap(),
        "--set",
        "dataset=idx_files",
        "--set",
        &format!("train_images={m}"),
        "--set",
        &format!("train_labels={m}"),
        "--set",
        &format!("test_images={m}"),
        "--set",
        &format!("test_labels={m}"),
    ]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_then_diff() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    let out = fedsynth(&[
        "run", "--output", d, "--seed", "4", "--set", "num_clients=4", "--set", "cohort_size=2", "--set", "rounds=2",
        "--set", "hidden=4", "--set", "distill_steps=3", "--set", "blob_train_per_class=20",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let snapshot = std::fs::read_to_string(dir.path().join("config.snapshot")).unwrap();
    assert!(snapshot.contains("master_seed = 4\n"));
    assert!(snapshot.contains("rounds = 2\n"));

    let a = dir.path().join("full_gradient.jsonl");
    let b = dir.path().join("synthetic.jsonl");
    let out = fedsynth(&["diff", a.to_str().unwrap(), b.to_str().unwrap()]);
    assert!(out.status.success());
    let csv = String::from_utf8(out.stdout).unwrap();
    assert_eq!(csv.lines().count(), 3);
    assert_eq!(csv, std::fs::read_to_string(dir.path().join("diff.csv")).unwrap());
}
