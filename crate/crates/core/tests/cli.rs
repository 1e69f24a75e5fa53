use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn fixture_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/multiwoz")
}

fn gem(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gem"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("gem runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn error_report(out: &Output) -> Value {
    assert!(!out.status.success());
    serde_json::from_slice(out.stderr.trim_ascii()).expect("stderr is one JSON object")
}

fn workspace(epochs: usize) -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    let config = format!(
        r#"seed = 3

[paths]
data_dir = "data"
checkpoint = "artifacts/gat.bin"
accuracy_table = "artifacts/accuracy.csv"
index = "artifacts/index.bin"
out_dir = "out"

[ingest]
source = "{}"

[gat]
layers = 1
heads = 2
hidden = 8
decoder_hidden = 8
context_window = 1

[training]
epochs = {epochs}
batch_size = 4

[embedding]
dimension = 64

[eval]
max_in_flight = 2
"#,
        fixture_dir().display()
    );
    std::fs::write(dir.path().join("run.toml"), config).unwrap();
    dir
}

#[test]
fn full_chain_under_stub_providers_is_reproducible() {
    let ws = workspace(3);
    let dir = ws.path();
    let base = ["--config", "run.toml", "--stub-providers"];
    let run = |cmd: &str| ok(&gem(dir, &[&base[..], &[cmd]].concat()));

    let ingested: Value = serde_json::from_str(run("ingest").trim()).unwrap();
    assert_eq!(ingested["splits"]["train"], 14);
    assert!(dir.join("data/test.json").exists());
    run("train-gat");
    assert!(dir.join("artifacts/gat.bin").exists());
    assert!(dir.join("out/training.jsonl").exists());
    run("calibrate-router");
    assert!(dir.join("artifacts/accuracy.csv").exists());
    run("build-index");

    run("evaluate");
    let first = std::fs::read(dir.join("out/report.json")).unwrap();
    run("evaluate");
    let second = std::fs::read(dir.join("out/report.json")).unwrap();
    assert_eq!(first, second);
    for name in ["turns.jsonl", "routing.csv", "summary.txt", "config.toml"] {
        assert!(dir.join("out").join(name).exists(), "{name}");
    }

    let report: Value = serde_json::from_slice(&first).unwrap();
    assert_eq!(report["format"], "gem-dst-run-report");
    assert_eq!(report["config"]["seed"], 3);
    assert_eq!(report["config"]["stub_providers"], true);

    // rerun from the persisted snapshot
    ok(&gem(dir, &["--config", "out/config.toml", "evaluate"]));
    assert_eq!(std::fs::read(dir.join("out/report.json")).unwrap(), first);
}

#[test]
fn train_with_zero_epochs_writes_a_checkpoint() {
    let ws = workspace(0);
    let dir = ws.path();
    ok(&gem(dir, &["--config", "run.toml", "ingest"]));
    let out: Value =
        serde_json::from_str(ok(&gem(dir, &["--config", "run.toml", "train-gat"])).trim()).unwrap();
    assert_eq!(out["epochs"], 0);
    assert!(dir.join("artifacts/gat.bin").exists());
    assert!(dir.join("artifacts/gat.json").exists());
}

#[test]
fn track_prints_one_record_per_user_turn() {
    let ws = workspace(1);
    let dir = ws.path();
    let base = ["--config", "run.toml", "--stub-providers"];
    for cmd in ["ingest", "train-gat", "calibrate-router", "build-index"] {
        ok(&gem(dir, &[&base[..], &[cmd]].concat()));
    }
    let corpus: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("data/test.json")).unwrap())
            .unwrap();
    let dialogue = &corpus["dialogues"][0];
    std::fs::write(dir.join("one.json"), dialogue.to_string()).unwrap();
    let user_turns = dialogue["turns"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|t| {
            t["speaker"]
                .as_str()
                .is_some_and(|s| s.eq_ignore_ascii_case("user"))
        })
        .count();
    let stdout = ok(&gem(dir, &[&base[..], &["track", "one.json"]].concat()));
    let lines: Vec<Value> = stdout
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), user_turns);
    assert!(lines
        .iter()
        .all(|l| l["state"].is_object() && l["dialogue_id"] == dialogue["id"]));
}

#[test]
fn missing_artifact_is_reported_by_path() {
    let ws = workspace(1);
    let dir = ws.path();
    let out = gem(
        dir,
        &["--config", "run.toml", "--stub-providers", "evaluate"],
    );
    assert_eq!(out.status.code(), Some(1));
    let report = error_report(&out);
    assert_eq!(report["command"], "evaluate");
    assert_eq!(report["error"]["kind"], "missing_artifact");
    assert!(report["error"]["path"]
        .as_str()
        .unwrap()
        .ends_with("test.json"));
}

#[test]
fn config_errors_list_fields() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("bad.toml"),
        "[training]\nbatch_size = 0\nlr = 1\n",
    )
    .unwrap();
    let report = error_report(&gem(dir.path(), &["--config", "bad.toml", "ingest"]));
    assert_eq!(report["error"]["kind"], "config");
    assert_eq!(report["error"]["fields"][0]["field"], "training.lr");

    std::fs::write(
        dir.path().join("bad.toml"),
        "[training]\nbatch_size = 0\n[retrieval]\ntau = 3.0\n",
    )
    .unwrap();
    let out = gem(dir.path(), &["--config", "bad.toml", "ingest"]);
    assert_eq!(out.status.code(), Some(2));
    let fields = error_report(&out)["error"]["fields"].clone();
    assert_eq!(fields.as_array().unwrap().len(), 2);
}
