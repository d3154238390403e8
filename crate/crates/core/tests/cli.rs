use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_pourbench");

const SMALL: &str = r#"{"seed": 3,
  "trial": {"n_trials": 6, "split": {"train": 4, "val": 1, "test": 1}},
  "train": {"epochs": 5, "batch_size": 1000}}"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// Exit code and the parsed JSON error body.
fn fails(dir: &Path, args: &[&str]) -> (i32, serde_json::Value) {
    let out = run(dir, args);
    let body = serde_json::from_slice(&out.stderr).unwrap_or_else(|_| {
        panic!("stderr is not JSON: {}", String::from_utf8_lossy(&out.stderr))
    });
    (out.status.code().unwrap(), body)
}

#[test]
fn stages_chain_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("small.json"), SMALL).unwrap();

    let first = ok(d, &["collect", "--config", "small.json", "--out", "ds"]);
    let again = ok(d, &["collect", "--config", "small.json", "--out", "ds2"]);
    assert!(first.contains("sha256"));
    assert_eq!(first, again);
    for f in ["manifest.json", "run_manifest.json", "trial_0000.csv", "trial_0000.json", "trial_0000_commands.csv"] {
        assert!(d.join("ds").join(f).is_file(), "{f}");
    }
    let a = std::fs::read(d.join("ds/trial_0005.csv")).unwrap();
    let b = std::fs::read(d.join("ds2/trial_0005.csv")).unwrap();
    assert_eq!(a, b);

    ok(d, &["train", "--config", "small.json", "--manifest", "ds", "--kind", "proprioceptive", "--out", "m"]);
    for f in ["model.json", "model_final.json", "loss_curves.json", "loss_curves.csv"] {
        assert!(d.join("m").join(f).is_file(), "{f}");
    }

    let mse = ok(d, &["eval-offline", "--manifest", "ds", "--kind", "oracle", "--out", "off"]);
    assert!(mse.contains("test mse 0.000000e0"), "{mse}");
    ok(d, &["eval-offline", "--manifest", "ds", "--model", "m/model.json", "--out", "off2"]);

    let tables = ok(
        d,
        &["eval-loop", "--model", "m/model.json", "--grid", "1,2", "--no-sweep", "--out", "ev"],
    );
    assert!(tables.contains("rmse") || tables.contains("RMSE"), "{tables}");
    assert!(d.join("ev/report.json").is_file());
    ok(d, &["eval-loop", "--kind", "analytical_fz", "--grid", "1", "--no-sweep", "--out", "ev2"]);

    let rep = ok(d, &["report", "--out", "rep", "ev", "ev2"]);
    assert!(rep.starts_with("2 reports"), "{rep}");
    assert!(d.join("rep/summary.txt").is_file());
}

#[test]
fn errors_are_json_with_distinct_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    std::fs::write(d.join("bad.json"), r#"{"sensors": {"bogus": 1}}"#).unwrap();
    std::fs::write(d.join("small.json"), SMALL).unwrap();

    let (code, body) = fails(d, &["collect", "--config", "bad.json", "--out", "x"]);
    assert_eq!(code, 2);
    assert_eq!(body["error"], "config");
    assert_eq!(body["path"], "sensors.bogus");
    assert!(!d.join("x").exists());

    let (code, body) = fails(d, &["collect", "--config", "small.json", "--n-trials", "3", "--out", "x"]);
    assert_eq!(code, 3);
    assert_eq!(body["error"], "insufficient_trials");
    assert!(!d.join("x").exists());

    let (code, body) = fails(d, &["eval-offline", "--manifest", "missing", "--kind", "oracle", "--out", "x"]);
    assert_eq!(code, 4);
    assert_eq!(body["error"], "io");

    let (code, _) = fails(d, &["eval-loop", "--kind", "tactile", "--out", "x"]);
    assert_eq!(code, 2);
    let (code, _) = fails(d, &["eval-loop", "--kind", "oracle", "--grid", "13", "--out", "x"]);
    assert_eq!(code, 2);
}
