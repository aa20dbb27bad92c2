use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn gridpinn(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridpinn"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn generate_writes_the_default_dataset_reproducibly() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&gridpinn(&["generate", "--seed", "3", "--out", "a/ds.csv"], d));
    ok(&gridpinn(&["generate", "--seed", "3", "--out", "b/ds.csv"], d));

    let a = fs::read(d.join("a/ds.csv")).unwrap();
    assert_eq!(a, fs::read(d.join("b/ds.csv")).unwrap());
    let text = String::from_utf8(a).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    assert_eq!(header.len(), 6 * 14);
    assert_eq!(header[0], "p_1");
    assert_eq!(header[83], "iim_14");
    assert_eq!(lines.count(), 192);

    let manifest = json(&d.join("a/manifest.json"));
    assert_eq!(manifest["command"], "generate");
    assert_eq!(manifest["config"]["seed"], 3);
    assert!(d.join("a/ds.json").exists());

    ok(&gridpinn(&["generate", "--seed", "4", "--out", "c/ds.csv"], d));
    assert_ne!(fs::read(d.join("a/ds.csv")).unwrap(), fs::read(d.join("c/ds.csv")).unwrap());
}

#[test]
fn outage_scenario_uses_its_own_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&gridpinn(&["generate", "--scenario", "outage", "--n", "300", "--out", "ds.csv"], d));
    let text = fs::read_to_string(d.join("ds.csv")).unwrap();
    assert_eq!(text.lines().count(), 301);
    let side = json(&d.join("ds.json"));
    assert_eq!(side["scenario"], "outage");
    assert_eq!(side["noise"]["p_sigma_rel"], 0.001);
}

#[test]
fn train_replay_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&gridpinn(&["generate", "--n", "60", "--out", "ds.csv"], d));
    let train = [
        "train", "--dataset", "ds.csv", "--out", "run1", "--epochs", "6", "--k-folds", "3", "--hidden", "8",
        "--regimes", "nn,inc50", "--schedule-period", "2",
    ];
    let stdout = ok(&gridpinn(&train, d));
    assert!(stdout.contains("50% increment"));

    let report = json(&d.join("run1/report.json"));
    let regimes = report["regimes"].as_array().unwrap();
    assert_eq!(regimes.len(), 2);
    assert_eq!(regimes[0]["regime"], "nn");
    assert_eq!(regimes[0]["normalized_error"], 0.0);
    assert_eq!(regimes[1]["folds"].as_array().unwrap().len(), 3);
    assert_eq!(report["dataset"]["file"], "ds.csv");
    for k in 0..3 {
        let curve = fs::read_to_string(d.join(format!("run1/curves/inc50_fold{k}.csv"))).unwrap();
        assert_eq!(curve.lines().count(), 7);
        assert!(d.join(format!("run1/models/nn_fold{k}.json")).exists());
    }

    ok(&gridpinn(&["train", "--manifest", "run1/manifest.json", "--out", "run2"], d));
    assert_eq!(
        fs::read(d.join("run1/report.json")).unwrap(),
        fs::read(d.join("run2/report.json")).unwrap()
    );

    let table = ok(&gridpinn(&["report", "--run", "run1"], d));
    let txt = fs::read_to_string(d.join("run1/report.txt")).unwrap();
    assert!(txt.starts_with(table.trim_end()), "{table}\n---\n{txt}");
}

#[test]
fn nn_only_run_is_its_own_baseline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&gridpinn(&["generate", "--n", "40", "--out", "ds.csv"], d));
    ok(&gridpinn(
        &["train", "--dataset", "ds.csv", "--out", "run", "--epochs", "3", "--k-folds", "2", "--regimes", "nn"],
        d,
    ));
    let txt = fs::read_to_string(d.join("run/report.txt")).unwrap();
    let row = txt.lines().find(|l| l.starts_with("| NN")).unwrap();
    assert_eq!(row.matches("0.00%").count(), 3, "{row}");
}

#[test]
fn wls_inverts_a_noiseless_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&gridpinn(&["generate", "--n", "20", "--noise-p", "0", "--noise-q", "0", "--out", "ds.csv"], d));
    ok(&gridpinn(&["wls", "--dataset", "ds.csv", "--out", "wls"], d));
    let mut stats = std::collections::HashMap::new();
    let mut rdr = csv::Reader::from_path(d.join("wls/wls_stats.csv")).unwrap();
    for rec in rdr.records() {
        let rec = rec.unwrap();
        stats.insert(rec[0].to_string(), rec[1].parse::<f64>().unwrap());
    }
    assert_eq!(stats["samples"], 20.0);
    assert!(stats["max_mag_error"] < 1e-6 && stats["max_ang_error"] < 1e-6, "{stats:?}");
    let estimates = fs::read_to_string(d.join("wls/wls_estimates.csv")).unwrap();
    assert_eq!(estimates.lines().count(), 21);
    assert_eq!(json(&d.join("wls/manifest.json"))["command"], "wls");
}

#[test]
fn setup_failures_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let code = |args: &[&str]| gridpinn(args, d).status.code();
    assert_eq!(code(&["train", "--dataset", "missing.csv", "--out", "r"]), Some(2));
    assert_eq!(code(&["wls", "--dataset", "missing.csv", "--out", "r"]), Some(2));
    assert_eq!(code(&["train", "--out", "r"]), Some(2));
    assert_eq!(code(&["generate", "--case", "nope.case", "--out", "x.csv"]), Some(2));
    fs::write(d.join("bad.json"), r#"{"epoch": 3}"#).unwrap();
    assert_eq!(code(&["train", "--config", "bad.json"]), Some(2));

    ok(&gridpinn(&["generate", "--n", "30", "--out", "ds.csv"], d));
    assert_eq!(code(&["train", "--dataset", "ds.csv", "--out", "r", "--regimes", "inc50"]), Some(2));
    assert_eq!(code(&["train", "--dataset", "ds.csv", "--out", "r", "--batch", "0"]), Some(2));
    assert_eq!(code(&["wls", "--manifest", "ds.csv", "--out", "r"]), Some(2));
}

#[test]
fn a_manifest_replays_only_its_own_command() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&gridpinn(&["generate", "--n", "30", "--out", "ds.csv"], d));
    assert_eq!(gridpinn(&["train", "--manifest", "manifest.json"], d).status.code(), Some(2));
    ok(&gridpinn(&["generate", "--manifest", "manifest.json", "--out", "again.csv"], d));
    assert_eq!(fs::read(d.join("ds.csv")).unwrap(), fs::read(d.join("again.csv")).unwrap());
}

#[test]
fn help_lists_the_experiment_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let help = ok(&gridpinn(&["train", "--help"], dir.path()));
    for needle in [
        "[default: 1000]",
        "[default: 16]",
        "[default: 5]",
        "[default: 32]",
        "[default: 0.001]",
        "[default: 100]",
        "tanh",
        "Adam",
    ] {
        assert!(help.contains(needle), "missing {needle}");
    }
    let help = ok(&gridpinn(&["generate", "--help"], dir.path()));
    assert!(help.contains("[default: 192 steady, 2000 outage]"));
}
