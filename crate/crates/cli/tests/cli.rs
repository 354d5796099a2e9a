use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

const SMALL: &[&str] = &[
    "--synth.n_systems",
    "20",
    "--synth.clips_per_system",
    "15",
    "--synth.feature_dim",
    "12",
];

fn aeval(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aeval"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = aeval(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn prepared() -> TempDir {
    let dir = tempfile::tempdir().unwrap();
    let mut args = vec!["synth"];
    args.extend_from_slice(SMALL);
    ok(dir.path(), &args);
    ok(dir.path(), &["split"]);
    dir
}

#[test]
fn synth_default_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["synth", "--out", "gen"]);
    assert!(stdout.contains("clips: 2100"), "{stdout}");
    assert!(stdout.contains("records: 63000"), "{stdout}");
    let mut names: Vec<String> = fs::read_dir(dir.path().join("gen"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, ["features.aevf", "ratings.jsonl", "truth.json"]);
    let manifest = fs::read_to_string(dir.path().join("gen/ratings.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 63000);
}

#[test]
fn missing_config_is_exit_2_with_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = aeval(dir.path(), &["--config", "nowhere/run.json", "synth"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere/run.json"));
}

#[test]
fn invalid_config_values_are_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.json"), r#"{"synth": {"n_systems": 0}}"#).unwrap();
    assert_eq!(code(&aeval(dir.path(), &["--config", "bad.json", "synth"])), 2);
    fs::write(dir.path().join("typo.json"), r#"{"trian": {}}"#).unwrap();
    assert_eq!(code(&aeval(dir.path(), &["--config", "typo.json", "synth"])), 2);
    assert_eq!(code(&aeval(dir.path(), &["synth", "--synth.nope", "1"])), 2);
}

#[test]
fn unwritable_output_is_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    // A regular file where a directory is needed fails even for root.
    fs::write(dir.path().join("blocker"), b"x").unwrap();
    let mut args = vec!["synth", "--out", "blocker/gen"];
    args.extend_from_slice(SMALL);
    assert_eq!(code(&aeval(dir.path(), &args)), 1);
}

#[test]
fn train_writes_model_and_history() {
    let dir = prepared();
    let stdout = ok(dir.path(), &["train", "--train.epochs", "4"]);
    assert!(stdout.contains("selected epoch:"), "{stdout}");
    assert!(dir.path().join("out/model.aevm").is_file());
    let history = fs::read_to_string(dir.path().join("out/history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 4);
}

#[test]
fn leaked_split_is_rejected_naming_the_system() {
    let dir = prepared();
    let path = dir.path().join("data/split.json");
    let mut split: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    // Move one test clip into train; its system now spans two buckets.
    let test = split["test"].as_array_mut().unwrap();
    let moved = test.remove(0);
    let clip = moved.as_str().unwrap().to_string();
    split["train"].as_array_mut().unwrap().push(moved);
    fs::write(&path, serde_json::to_string(&split).unwrap()).unwrap();

    let out = aeval(dir.path(), &["train"]);
    assert_eq!(code(&out), 2);
    let system = clip.split('-').next().unwrap();
    assert!(String::from_utf8_lossy(&out.stderr).contains(system));
}

#[test]
fn regression_flag_matches_full_with_zero_alpha() {
    let dir = prepared();
    ok(dir.path(), &["train", "--train.loss.mode", "+R", "--paths.history", "out/r.jsonl"]);
    ok(
        dir.path(),
        &["train", "--train.loss.alpha", "0", "--paths.history", "out/a0.jsonl"],
    );
    let r = fs::read(dir.path().join("out/r.jsonl")).unwrap();
    let a0 = fs::read(dir.path().join("out/a0.jsonl")).unwrap();
    assert_eq!(r, a0);
}

#[test]
fn eval_prints_table_and_writes_reports() {
    let dir = prepared();
    ok(dir.path(), &["train"]);
    let stdout = ok(dir.path(), &["eval"]);
    assert!(stdout.contains("Expert") && stdout.contains("Non-Expert"), "{stdout}");
    assert!(stdout.contains("utterance |") && stdout.contains("system    |"), "{stdout}");
    let csv = fs::read_to_string(dir.path().join("out/eval.csv")).unwrap();
    assert_eq!(csv.lines().count(), 41);
    assert!(dir.path().join("out/eval.json").is_file());
    assert!(dir.path().join("out/eval.svg").is_file());
}

#[test]
fn eval_without_model_is_exit_2() {
    let dir = prepared();
    assert_eq!(code(&aeval(dir.path(), &["eval"])), 2);
}

#[test]
fn eval_on_empty_test_split_is_exit_2() {
    let dir = prepared();
    ok(dir.path(), &["train", "--train.epochs", "1"]);
    let path = dir.path().join("data/split.json");
    let mut split: serde_json::Value = serde_json::from_str(&fs::read_to_string(&path).unwrap()).unwrap();
    let test = std::mem::take(split["test"].as_array_mut().unwrap());
    split["train"].as_array_mut().unwrap().extend(test);
    fs::write(&path, serde_json::to_string(&split).unwrap()).unwrap();
    let out = aeval(dir.path(), &["eval"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty"));
}

#[test]
fn constant_predictions_are_exit_3_naming_the_head() {
    let dir = prepared();
    let model = aeval::model::ProbeModel::zeros(12);
    fs::create_dir_all(dir.path().join("out")).unwrap();
    let file = fs::File::create(dir.path().join("out/model.aevm")).unwrap();
    aeval::model::write_model(&model, file).unwrap();
    let out = aeval(dir.path(), &["eval"]);
    assert_eq!(code(&out), 3);
    assert!(String::from_utf8_lossy(&out.stderr).contains("PQ/expert"));
}

#[test]
fn validate_and_targets_report_counts() {
    let dir = prepared();
    let stdout = ok(dir.path(), &["validate"]);
    assert!(stdout.contains("records: 9000"), "{stdout}");
    assert!(stdout.contains("no violations"), "{stdout}");
    let stdout = ok(dir.path(), &["targets"]);
    assert!(stdout.contains("targets: 3000"), "{stdout}");
    let targets = fs::read_to_string(dir.path().join("data/targets.jsonl")).unwrap();
    assert_eq!(targets.lines().count(), 3000);
}

#[test]
fn strict_mode_rejects_unknown_manifest_fields() {
    let dir = prepared();
    let path = dir.path().join("data/ratings.jsonl");
    let mut text = fs::read_to_string(&path).unwrap();
    text = text.replacen("{\"clip_id\"", "{\"extra\":1,\"clip_id\"", 1);
    fs::write(&path, text).unwrap();
    ok(dir.path(), &["validate"]);
    let out = aeval(dir.path(), &["--strict", "validate"]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 1"));
}

#[test]
fn report_writes_statistics() {
    let dir = prepared();
    let stdout = ok(dir.path(), &["report"]);
    assert!(stdout.contains("expert vs non-expert PCC"), "{stdout}");
    for name in ["report.json", "report.svg", "histograms.csv"] {
        assert!(dir.path().join("out").join(name).is_file(), "{name}");
    }
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    let prompts: u64 = json["prompt_lengths"]["counts"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c.as_u64().unwrap())
        .sum();
    assert_eq!(prompts, 300);
}

#[test]
fn config_file_and_flags_combine() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(
        dir.path().join("run.json"),
        r#"{"synth": {"n_systems": 20, "clips_per_system": 5, "feature_dim": 4}, "train": {"epochs": 2}}"#,
    )
    .unwrap();
    ok(dir.path(), &["--config", "run.json", "synth", "--synth.clips_per_system", "10"]);
    let manifest = fs::read_to_string(dir.path().join("data/ratings.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 20 * 10 * 30);
    ok(dir.path(), &["--config", "run.json", "split"]);
    ok(dir.path(), &["--config", "run.json", "train"]);
    let history = fs::read_to_string(dir.path().join("out/history.jsonl")).unwrap();
    assert_eq!(history.lines().count(), 2);
}
