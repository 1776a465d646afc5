use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn tcen(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tcen")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = tcen(args);
    assert!(
        out.status.success(),
        "tcen {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

/// Default config shrunk to a few seconds of work.
fn tiny_config(dir: &Path) -> PathBuf {
    let probe = dir.join("probe");
    ok(&["gen-data", "--out", s(&probe), "--seed", "3"]);
    let mut text = fs::read_to_string(probe.join("config.toml")).unwrap();
    for (from, to) in [
        ("asr_size = 2000", "asr_size = 24"),
        ("mt_size = 5000", "mt_size = 24"),
        ("st_size = 500", "st_size = 16"),
        ("dev_size = 100", "dev_size = 4"),
        ("test_size = 100", "test_size = 4"),
        ("steps = 1500", "steps = 4"),
        ("steps = 1000", "steps = 4"),
        ("steps = 3000", "steps = 6"),
        ("d_model = 32", "d_model = 8"),
        ("att_dim = 32", "att_dim = 8"),
        ("eval_every = 100", "eval_every = 3"),
        ("beam = 10", "beam = 2"),
    ] {
        assert!(text.contains(from), "default config lacks `{from}`");
        text = text.replace(from, to);
    }
    let path = dir.join("tiny.toml");
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn no_arguments_is_a_usage_error() {
    let out = tcen(&[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
}

#[test]
fn gen_data_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["gen-data", "--seed", "7", "--out", s(&a)]);
    ok(&["gen-data", "--seed", "7", "--out", s(&b)]);
    assert_eq!(tree(&a), tree(&b));
    let c = tmp.path().join("c");
    ok(&["gen-data", "--seed", "8", "--out", s(&c)]);
    assert_ne!(tree(&a), tree(&c));
}

#[test]
fn echoed_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["gen-data", "--seed", "5", "--out", s(&a)]);
    ok(&["gen-data", "--config", s(&a.join("config.toml")), "--out", s(&b)]);
    assert_eq!(tree(&a), tree(&b));
}

#[test]
fn unknown_config_key_names_the_field() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    let good = tiny_config(tmp.path());
    let text = fs::read_to_string(good).unwrap().replace("[beam]\n", "[beam]\nwidth = 4\n");
    fs::write(&cfg, text).unwrap();
    let out = tcen(&["gen-data", "--config", s(&cfg), "--out", s(&tmp.path().join("o"))]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("width") && err.contains("bad.toml"), "{err}");
}

#[test]
fn corrupt_corpus_is_a_data_error_naming_the_file() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&data)]);
    fs::write(data.join("st.jsonl"), "{\"frames\": [[1.0]], \"target\": [\"nope\"]}\n").unwrap();
    let out = tcen(&[
        "finetune",
        "--config",
        s(&cfg),
        "--data",
        s(&data),
        "--variant",
        "mt-noise-off",
        "--out",
        s(&tmp.path().join("ft")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("st.jsonl:1"), "{err}");
}

#[test]
fn missing_noisy_corpus_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let data = tmp.path().join("data");
    ok(&["gen-data", "--config", s(&cfg), "--out", s(&data)]);
    let out = tcen(&["pretrain", "--config", s(&cfg), "--data", s(&data), "--out", s(&tmp.path().join("p"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--noisy"));
}

#[test]
fn full_pipeline_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = tiny_config(root);
    let c = s(&cfg);
    let data = root.join("data");
    let noiser = root.join("noiser");
    let noisy = root.join("noisy");
    let pre = root.join("pre");
    let fine = root.join("fine");
    let dec = root.join("dec");
    let ev = root.join("ev");
    ok(&["gen-data", "--config", c, "--out", s(&data)]);
    ok(&["train-noiser", "--config", c, "--data", s(&data), "--out", s(&noiser)]);
    assert!(noiser.join("noiser.json").exists());
    ok(&[
        "noise-corpus",
        "--config",
        c,
        "--data",
        s(&data),
        "--noiser",
        s(&noiser.join("noiser.json")),
        "--out",
        s(&noisy),
    ]);
    let noisy_mt = noisy.join("mt_noisy.jsonl");
    let lines = fs::read_to_string(&noisy_mt).unwrap().lines().count();
    assert_eq!(lines, 24);
    ok(&["pretrain", "--config", c, "--data", s(&data), "--noisy", s(&noisy_mt), "--out", s(&pre)]);
    ok(&[
        "finetune",
        "--config",
        c,
        "--data",
        s(&data),
        "--noisy",
        s(&noisy_mt),
        "--init",
        s(&pre.join("model.ckpt")),
        "--out",
        s(&fine),
    ]);
    for f in ["model.ckpt", "train_log.csv", "eval_log.csv", "config.toml"] {
        assert!(fine.join(f).exists(), "missing {f}");
    }
    ok(&["decode", "--config", c, "--data", s(&data), "--model", s(&fine.join("model.ckpt")), "--out", s(&dec)]);
    assert_eq!(fs::read_to_string(dec.join("hypotheses.txt")).unwrap().lines().count(), 4);
    ok(&[
        "evaluate",
        "--config",
        c,
        "--data",
        s(&data),
        "--hyps",
        s(&dec.join("hypotheses.txt")),
        "--model",
        s(&fine.join("model.ckpt")),
        "--out",
        s(&ev),
    ]);
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(ev.join("evaluation.json")).unwrap()).unwrap();
    let acc = report["token_accuracy"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&acc));
    let log = format!("ft={}", s(&fine.join("eval_log.csv")));
    ok(&["curves", "--config", c, "--log", &log, "--out", s(&root.join("curves"))]);
    let csv = fs::read_to_string(root.join("curves").join("curves.csv")).unwrap();
    assert!(csv.starts_with("step,ft\n"), "{csv}");
}

#[test]
fn resume_matches_an_uninterrupted_run() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = tiny_config(root);
    let c = s(&cfg);
    let data = root.join("data");
    ok(&["gen-data", "--config", c, "--out", s(&data)]);
    let base = ["finetune", "--config", c, "--data", s(&data), "--variant", "mt-noise-off"];
    let full = root.join("full");
    let chunked = root.join("chunked");
    let part = root.join("part");
    let resumed = root.join("resumed");
    ok(&[&base[..], &["--out", s(&full)]].concat());
    ok(&[&base[..], &["--out", s(&chunked), "--checkpoint-every", "4"]].concat());
    ok(&[&base[..], &["--out", s(&part), "--until", "4"]].concat());
    ok(&[&base[..], &["--out", s(&resumed), "--resume", s(&part.join("model.ckpt"))]].concat());
    let bytes = |d: &Path, f: &str| fs::read(d.join(f)).unwrap();
    assert_ne!(bytes(&full, "model.ckpt"), bytes(&part, "model.ckpt"));
    for d in [&chunked, &resumed] {
        assert_eq!(bytes(&full, "model.ckpt"), bytes(d, "model.ckpt"));
        assert_eq!(bytes(&full, "train_log.csv"), bytes(d, "train_log.csv"));
        assert_eq!(bytes(&full, "eval_log.csv"), bytes(d, "eval_log.csv"));
    }
}

#[test]
fn ablate_runs_the_weight_sharing_variant() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tiny_config(tmp.path());
    let out = tmp.path().join("ab");
    ok(&["ablate", "--config", s(&cfg), "--variant", "weight-sharing-off", "--out", s(&out)]);
    let summary = fs::read_to_string(out.join("summary.json")).unwrap();
    assert!(summary.contains("weight-sharing-off"));
    assert!(out.join("weight-sharing-off").join("bleu.json").exists());
    let bad = tcen(&["ablate", "--variant", "nope", "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(1));
}
