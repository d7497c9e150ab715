use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_phasecond"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, name: &str, n: &str, seed: &str) -> PathBuf {
    let p = dir.join(name);
    let o = run(&[
        "synth-data",
        "--out",
        s(&p),
        "--examples",
        n,
        "--seed",
        seed,
        "--min-len",
        "10",
        "--max-len",
        "14",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    p
}

const SMALL: [&str; 10] = [
    "--hidden",
    "4",
    "--word-dim",
    "6",
    "--char-filters",
    "4",
    "--epochs",
    "1",
    "--batch-size",
    "4",
];

/// Trains a tiny model for one epoch and returns (run dir, dev data).
fn tiny_run(dir: &Path) -> (PathBuf, PathBuf) {
    let train = synth(dir, "train.jsonl", "8", "1");
    let dev = synth(dir, "dev.jsonl", "4", "2");
    let out = dir.join("run");
    let mut args = vec!["train", "--out", s(&out), "--train", s(&train), "--dev", s(&dev)];
    args.extend(SMALL);
    let o = run(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (out, dev)
}

#[test]
fn invalid_path_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(dir.path(), "t.jsonl", "4", "1");
    let out = dir.path().join("run");
    let mut args = vec![
        "train",
        "--out",
        s(&out),
        "--train",
        s(&train),
        "--dev",
        s(&train),
        "--path",
        "LS->Fi",
    ];
    args.extend(SMALL);
    let o = run(&args);
    assert_eq!(code(&o), 2);
    assert!(
        stderr(&o).contains("QP attention") || stderr(&o).contains("first attention"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn width_mismatch_names_step() {
    let dir = tempfile::tempdir().unwrap();
    let train = synth(dir.path(), "t.jsonl", "4", "1");
    let out = dir.path().join("run");
    let mut args = vec![
        "train",
        "--out",
        s(&out),
        "--train",
        s(&train),
        "--dev",
        s(&train),
        "--path",
        "LQ->LQ->Fo->LQ->Fi",
    ];
    args.extend(SMALL);
    let o = run(&args);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("4:Fi"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    std::fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    let o = run(&["train", "--config", s(&cfg), "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn missing_dataset_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&["train", "--out", s(&dir.path().join("r"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn grad_check_passes_and_names_injected_fault() {
    let o = run(&["grad-check", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = String::from_utf8_lossy(&o.stdout);
    assert!(out.contains("seed 3"));
    for c in [
        "encoders",
        "qp_attention",
        "self_attention",
        "outer_fusion",
        "inner_fusion",
        "pointer_head",
        "span_loss",
    ] {
        assert!(out.contains(&format!("PASS {c}")), "{out}");
    }
    let o = run(&["grad-check", "--inject-fault"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("corrupted_tanh"));
}

#[test]
fn train_evaluate_predict_dump() {
    let dir = tempfile::tempdir().unwrap();
    let (run_dir, dev) = tiny_run(dir.path());
    for f in ["best.ckpt.json", "last.ckpt.json", "metrics.csv", "config.toml"] {
        assert!(run_dir.join(f).exists(), "{f}");
    }
    let echoed = std::fs::read_to_string(run_dir.join("config.toml")).unwrap();
    assert!(echoed.contains("hidden = 4") && echoed.contains("LQ->LQ->Fo->LS->Fi->LS->Fi"));
    let ckpt = run_dir.join("best.ckpt.json");

    let eval_dir = dir.path().join("eval");
    let o = run(&[
        "evaluate",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&dev),
        "--out",
        s(&eval_dir),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("EM "));
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("report.json")).unwrap()).unwrap();
    let questions = report["questions"].as_array().unwrap();
    assert_eq!(questions.len(), 4);
    assert!(questions
        .iter()
        .all(|q| q["em"].is_number() && q["f1"].is_number()));
    let preds: Value =
        serde_json::from_str(&std::fs::read_to_string(eval_dir.join("predictions.json")).unwrap()).unwrap();
    assert_eq!(preds.as_object().unwrap().len(), 4);

    let o = run(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--passage",
        "w1 k w45 w2",
        "--question",
        "what follows k",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let line: Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(line["start"].as_u64().unwrap() <= line["end"].as_u64().unwrap());

    let o = run(&[
        "dump-attention",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&dev),
        "--id",
        "nope",
        "--out",
        s(&dir.path().join("x")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("synth-2-0"), "{}", stderr(&o));

    let att = dir.path().join("att");
    let o = run(&[
        "dump-attention",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&dev),
        "--id",
        "synth-2-1",
        "--out",
        s(&att),
        "--csv",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("self-attention layer 2 is"));
    check_attention_dir(&att, 4);
}

fn schema() -> Value {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/attention_schema.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

/// Every JSON file validates against the shipped schema, has consistent
/// dimensions and row-normalized weights.
fn check_attention_dir(dir: &Path, expected: usize) {
    let validator = jsonschema::validator_for(&schema()).unwrap();
    let mut json: Vec<PathBuf> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .collect();
    json.sort();
    assert_eq!(json.len(), expected);
    let kinds: Vec<String> = json
        .iter()
        .map(|p| {
            let v: Value = serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap();
            let errors: Vec<String> = validator.iter_errors(&v).map(|e| e.to_string()).collect();
            assert!(errors.is_empty(), "{}: {errors:?}", p.display());
            let rows = v["row_tokens"].as_array().unwrap().len();
            let cols = v["col_tokens"].as_array().unwrap().len();
            for key in ["scores", "weights"] {
                let m = v[key].as_array().unwrap();
                assert_eq!(m.len(), rows);
                assert!(m.iter().all(|r| r.as_array().unwrap().len() == cols));
            }
            for r in v["weights"].as_array().unwrap() {
                let sum: f64 = r.as_array().unwrap().iter().map(|x| x.as_f64().unwrap()).sum();
                assert!((sum - 1.0).abs() < 1e-9);
            }
            let stem = p.file_stem().unwrap().to_str().unwrap();
            assert!(dir.join(format!("{stem}_scores.csv")).exists());
            assert!(dir.join(format!("{stem}_weights.csv")).exists());
            format!("{}{}", v["kind"].as_str().unwrap(), v["layer_index"])
        })
        .collect();
    assert_eq!(kinds, ["qp1", "qp2", "self1", "self2"]);
}

#[test]
fn schema_rejects_malformed_export() {
    let validator = jsonschema::validator_for(&schema()).unwrap();
    let good = serde_json::json!({
        "kind": "qp", "layer_index": 1, "row_tokens": ["a"], "col_tokens": ["b"],
        "scores": [[0.3]], "weights": [[1.0]], "mean_row_entropy": 0.0
    });
    assert!(validator.is_valid(&good));
    let mut bad = good.clone();
    bad["kind"] = "bilinear".into();
    assert!(!validator.is_valid(&bad));
    let mut bad = good;
    bad.as_object_mut().unwrap().remove("scores");
    assert!(!validator.is_valid(&bad));
}

#[test]
fn evaluate_rejects_unrelated_dataset() {
    let dir = tempfile::tempdir().unwrap();
    let (run_dir, _) = tiny_run(dir.path());
    let other = dir.path().join("other.jsonl");
    let line = serde_json::json!({
        "id": "x", "passage": "zzz yyy", "question": "qqq",
        "passage_tokens": [{"text": "zzz", "start": 0, "end": 3}, {"text": "yyy", "start": 4, "end": 7}],
        "question_tokens": [{"text": "qqq", "start": 0, "end": 3}],
        "spans": [[0, 0]], "answers": ["zzz"]
    });
    std::fs::write(&other, format!("{line}\n")).unwrap();
    let o = run(&[
        "evaluate",
        "--checkpoint",
        s(&run_dir.join("best.ckpt.json")),
        "--data",
        s(&other),
    ]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("do not match"));
}

#[test]
fn corrupt_checkpoint_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let dev = synth(dir.path(), "d.jsonl", "2", "1");
    let ckpt = dir.path().join("bad.json");
    std::fs::write(&ckpt, "{\"format_version\": 1, \"par").unwrap();
    let o = run(&["evaluate", "--checkpoint", s(&ckpt), "--data", s(&dev)]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("integrity"), "{}", stderr(&o));
}
