use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use hofmtl_core::checkpoint::sha256_hex;
use hofmtl_core::cli::{manifest_path, RunManifest};

const BIN: &str = env!("CARGO_BIN_EXE_hofmtl");

fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

fn hofmtl(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .env_remove("HOFMTL_DATA")
        .output()
        .unwrap()
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn copy_dir(from: &Path, to: &Path) {
    std::fs::create_dir_all(to).unwrap();
    for entry in std::fs::read_dir(from).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), to.join(entry.file_name())).unwrap();
    }
}

fn sha(path: &Path) -> String {
    sha256_hex(&std::fs::read(path).unwrap())
}

#[test]
fn usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(hofmtl(dir.path(), &[]).status.code(), Some(2));
    assert_eq!(hofmtl(dir.path(), &["frobnicate"]).status.code(), Some(2));
    assert_eq!(hofmtl(dir.path(), &["predict", "--text", "x"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_one_with_a_single_line() {
    let dir = tempfile::tempdir().unwrap();
    let o = hofmtl(dir.path(), &["predict", "--ckpt", "missing.mtl1", "--text", "hi"]);
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8(o.stderr).unwrap();
    assert_eq!(err.lines().count(), 1, "{err}");
    assert!(err.starts_with("error[io]: "), "{err}");
    let o = hofmtl(dir.path(), &["train", "--out", "m.mtl1"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8(o.stderr).unwrap().starts_with("error[config]: "));
}

#[test]
fn preprocess_matches_golden_file() {
    let dir = tempfile::tempdir().unwrap();
    let input = fixtures().join("tweets.txt");
    ok(&hofmtl(dir.path(), &["preprocess", "--in", input.to_str().unwrap(), "--out", "norm.txt"]));
    let got = std::fs::read_to_string(dir.path().join("norm.txt")).unwrap();
    let want = std::fs::read_to_string(fixtures().join("tweets.normalized.txt")).unwrap();
    assert_eq!(got.lines().collect::<Vec<_>>(), want.lines().collect::<Vec<_>>());
    assert!(manifest_path(&dir.path().join("norm.txt")).is_file());
}

#[test]
fn ingest_reports_class_counts() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let out = ok(&hofmtl(
        dir.path(),
        &[
            "ingest",
            "--schema",
            f.join("olid.schema.toml").to_str().unwrap(),
            "--in",
            f.join("olid_sample.tsv").to_str().unwrap(),
            "--out",
            "olid.jsonl",
        ],
    ));
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["class_counts"]["HOF"], 8);
    assert_eq!(v["class_counts"]["NOT"], 12);
    assert_eq!(std::fs::read_to_string(dir.path().join("olid.jsonl")).unwrap().lines().count(), 20);
}

#[test]
fn train_predict_eval_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    copy_dir(&fixtures().join("data"), &dir.path().join("data"));
    let args = ["train", "--data", "data", "--preset", "all", "--epochs", "1", "--seed", "3", "--out", "run/"];
    let history = ok(&hofmtl(dir.path(), &args));
    assert_eq!(history.lines().count(), 1);
    let ckpt = dir.path().join("run/model.mtl1");
    let first = sha(&ckpt);

    let manifest = RunManifest::load(&manifest_path(&ckpt)).unwrap();
    assert_eq!(manifest.command, "train");
    assert_eq!(manifest.seed, Some(3));
    assert_eq!(manifest.inputs.len(), 5);
    assert_eq!(manifest.artifacts.get("run/model.mtl1"), Some(&first));

    // Replaying the recorded argv from the recorded directory reproduces every artifact.
    let replay = Command::new(BIN)
        .args(&manifest.argv[1..])
        .current_dir(&manifest.working_dir)
        .output()
        .unwrap();
    ok(&replay);
    for (path, digest) in &manifest.artifacts {
        assert_eq!(&sha(&Path::new(&manifest.working_dir).join(path)), digest, "{path}");
    }

    let out = ok(&hofmtl(dir.path(), &["predict", "--ckpt", "run/model.mtl1", "--text", "@user you idiot 😂"]));
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    let preds = v["predictions"].as_array().unwrap();
    let tasks: Vec<&str> = preds.iter().map(|p| p["task"].as_str().unwrap()).collect();
    assert_eq!(tasks, ["hof", "sentiment", "emotion", "target"]);

    let out = ok(&hofmtl(dir.path(), &["eval", "--ckpt", "run/model.mtl1", "--data", "data/hof_test.jsonl"]));
    let v: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(v["task"], "hof");
    assert_eq!(v["n"], 60);
    assert!(v["macro"]["f1"].as_f64().unwrap() <= 1.0);
}

#[test]
fn data_dir_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(BIN)
        .args(["train", "--preset", "baseline", "--epochs", "1", "--out", "m.mtl1"])
        .current_dir(dir.path())
        .env("HOFMTL_DATA", fixtures().join("data"))
        .output()
        .unwrap();
    ok(&o);
    assert!(dir.path().join("m.mtl1").is_file());
    assert!(dir.path().join("m.mtl1.history.jsonl").is_file());
}

#[test]
fn experiment_grid_writes_results_and_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    let grid = fixtures().join("grid_small.toml");
    let run = |out: &str| {
        let table = ok(&hofmtl(dir.path(), &["experiment", "--grid", grid.to_str().unwrap(), "--out", out]));
        let results = std::fs::read(dir.path().join(out).join("results.jsonl")).unwrap();
        (table, results)
    };
    let (table, results) = run("a");
    assert!(table.contains("Macro F1"));
    assert!(table.contains("baseline") && table.contains("HASOC_all"));
    assert_eq!(String::from_utf8_lossy(&results).lines().count(), 4);
    assert!(dir.path().join("a/summary.json").is_file());
    assert!(dir.path().join("a/manifest.json").is_file());
    assert!(dir.path().join("a/checkpoints/HASOC_all-seed1.mtl1").is_file());
    assert_eq!(run("b"), (table, results));
}
