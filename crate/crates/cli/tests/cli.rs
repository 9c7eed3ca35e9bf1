//! Command-line behaviour: stage ordering, config errors, exit codes and the
//! synthetic dataset stage.

use std::path::Path;
use std::process::{Command, Output};

fn interact(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_interact"))
        .args(args)
        .env("APP_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn dynamics_before_human_embedding_names_step_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = write(dir.path(), "c.toml", "actions = [\"hand_shake\"]\n");
    assert!(interact(&["--config", &cfg, "--out", out, "synth"]).status.success());
    let o = interact(&["--config", &cfg, "--out", out, "train-dynamics"]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("Step 1"), "{}", stderr(&o));
    assert!(stderr(&o).contains("train-embedding --agent human"), "{}", stderr(&o));
}

#[test]
fn stages_without_a_dataset_name_synth() {
    let dir = tempfile::tempdir().unwrap();
    let o = interact(&["--out", dir.path().to_str().unwrap(), "train-embedding", "--agent", "human"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("synth"), "{}", stderr(&o));
}

#[test]
fn eval_without_checkpoints_names_step_four() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = write(dir.path(), "c.toml", "actions = [\"rocket\"]\n");
    assert!(interact(&["--config", &cfg, "--out", out, "synth"]).status.success());
    let o = interact(&["--config", &cfg, "--out", out, "eval"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Step 4"), "{}", stderr(&o));
}

#[test]
fn invalid_config_reports_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    for (text, field) in [
        ("[dynamics]\nstate_dim = -4\n", "dynamics.state_dim"),
        ("[robot_map]\nepochs = \"many\"\n", "robot_map.epochs"),
        ("[human_embedding.window]\nw = 20\nstride = 1\n", "robot_embedding.window.w"),
        ("test_fraction = 0.0\n", "test_fraction"),
        ("[synth]\nnot_a_field = 1\n", "synth"),
    ] {
        let cfg = write(dir.path(), "bad.toml", text);
        let o = interact(&["--config", &cfg, "--out", out, "synth"]);
        assert_eq!(o.status.code(), Some(1), "{text}: {}", stderr(&o));
        assert!(stderr(&o).contains(field), "{text}: {}", stderr(&o));
    }
}

#[test]
fn usage_errors_exit_64() {
    assert_eq!(interact(&["no-such-command"]).status.code(), Some(64));
    assert_eq!(interact(&["train-embedding"]).status.code(), Some(64));
    assert_eq!(interact(&["--help"]).status.code(), Some(0));
}

#[test]
fn synth_writes_table_shaped_counts_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = interact(&["--out", out, "--seed", "5", "synth"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("data/manifest.json")).unwrap()).unwrap();
    let expect = [
        ("HHI", [("hand_shake", 38), ("hand_wave", 31), ("parachute", 49), ("rocket", 70)]),
        ("HRI", [("hand_shake", 10), ("hand_wave", 10), ("parachute", 11), ("rocket", 10)]),
    ];
    for (pair, rows) in expect {
        for (action, n) in rows {
            assert_eq!(manifest["counts"][pair][action], n, "{pair} {action}");
        }
    }
    let n_train = manifest["train"].as_array().unwrap().len();
    let n_test = manifest["test"].as_array().unwrap().len();
    assert_eq!(n_train + n_test, 229);
    let first = std::fs::read(dir.path().join("data/dataset.jsonl")).unwrap();
    assert!(interact(&["--out", out, "--seed", "5", "synth"]).status.success());
    assert_eq!(first, std::fs::read(dir.path().join("data/dataset.jsonl")).unwrap());
}

#[test]
fn changed_config_makes_artifacts_stale() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let cfg = write(dir.path(), "c.toml", "actions = [\"hand_wave\"]\n");
    assert!(interact(&["--config", &cfg, "--out", out, "--seed", "1", "synth"]).status.success());
    let o = interact(&["--config", &cfg, "--out", out, "--seed", "2", "train-embedding", "--agent", "human"]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("--force"), "{}", stderr(&o));
}
