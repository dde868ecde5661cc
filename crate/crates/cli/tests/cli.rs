use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn editvq(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_editvq"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = editvq(args);
    assert!(
        out.status.success(),
        "editvq {args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

struct Pipeline {
    _dir: tempfile::TempDir,
    corpus: PathBuf,
    pairs: PathBuf,
    config: PathBuf,
    root: PathBuf,
}

fn small_corpus() -> Pipeline {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().to_path_buf();
    let corpus = root.join("corpus.jsonl");
    let pairs = root.join("pairs.jsonl");
    let config = root.join("train.json");
    ok(&[
        "gen-corpus", "--out", p(&corpus), "--seed", "7", "--families", "F1,F4",
        "--questions-per-family", "4", "--submissions-per-question", "6",
    ]);
    ok(&["pair", "--corpus", p(&corpus), "--out", p(&pairs)]);
    std::fs::write(
        &config,
        r#"{"train": {"model": {"d_ff": 32, "heads": 2, "max_len": 96}, "batch_size": 4, "warmup_steps": 1},
            "split": {"test_unique_inputs": 4}}"#,
    )
    .unwrap();
    Pipeline { _dir: dir, corpus, pairs, config, root }
}

fn train(pl: &Pipeline, kind: &str, name: &str) -> PathBuf {
    let ck = pl.root.join(name);
    ok(&[
        "train", "--corpus", p(&pl.corpus), "--pairs", p(&pl.pairs), "--out", p(&ck),
        "--config", p(&pl.config), "--model", kind, "--d-model", "16", "--layers", "1",
        "--codebook-size", "4", "--epochs", "1", "--max-steps", "2", "--valid-limit", "8",
    ]);
    ck
}

#[test]
fn gen_corpus_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.jsonl"), dir.path().join("b.jsonl"));
    for f in [&a, &b] {
        ok(&["gen-corpus", "--seed", "7", "--families", "F1,F3", "--questions-per-family", "3", "--out", p(f)]);
    }
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    assert_eq!(String::from_utf8(ta).unwrap().lines().count(), 2 * 3 * 30);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("gen.json");
    std::fs::write(&cfg, r#"{"families": ["F2"], "questions_per_family": 2, "submissions_per_question": 4}"#).unwrap();
    let out = dir.path().join("c.jsonl");
    let run = ok(&["gen-corpus", "--config", p(&cfg), "--submissions-per-question", "5", "--out", p(&out)]);
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 2 * 5);
    assert!(text.lines().all(|l| l.contains("\"F2-q")));
    // the resolved configuration and seed are echoed
    let err = String::from_utf8_lossy(&run.stderr);
    assert!(err.contains("gen-corpus seed: 7"), "{err}");
    assert!(err.contains("\"submissions_per_question\":5"), "{err}");
}

#[test]
fn usage_errors_exit_1_and_data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("c.jsonl");
    assert_eq!(editvq(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(editvq(&["gen-corpus"]).status.code(), Some(1));
    assert_eq!(editvq(&["gen-corpus", "--out", p(&out), "--slow-fraction", "1.5"]).status.code(), Some(1));
    assert_eq!(editvq(&["gen-corpus", "--out", p(&out), "--families", "F9"]).status.code(), Some(1));

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"questions": 3}"#).unwrap();
    let bad = editvq(&["gen-corpus", "--out", p(&out), "--config", p(&cfg)]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("unknown config key 'questions'"));

    let missing = dir.path().join("missing.jsonl");
    assert_eq!(editvq(&["stats", "--corpus", p(&missing)]).status.code(), Some(2));
    assert_eq!(
        editvq(&["suggest", "--checkpoint", p(&missing), "--source", p(&missing)]).status.code(),
        Some(2)
    );
    let garbage = dir.path().join("garbage.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let src = dir.path().join("x.ml");
    std::fs::write(&src, "print(1);").unwrap();
    assert_eq!(
        editvq(&["suggest", "--checkpoint", p(&garbage), "--source", p(&src)]).status.code(),
        Some(2)
    );
    assert_eq!(editvq(&["--help"]).status.code(), Some(0));
}

#[test]
fn stats_reports_the_runtime_gap() {
    let pl = small_corpus();
    let json = pl.root.join("stats.json");
    let out = ok(&["stats", "--corpus", p(&pl.corpus), "--json", p(&json)]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("programs: 48"), "{text}");
    assert!(text.contains("p90 / median"));
    let report: Value = serde_json::from_str(&std::fs::read_to_string(&json).unwrap()).unwrap();
    assert!(report["p90_over_median"].as_f64().unwrap() >= 1.5);
}

#[test]
fn pair_writes_pairs_and_split() {
    let pl = small_corpus();
    let split = pl.root.join("split.json");
    let filtered = pl.root.join("max.jsonl");
    ok(&["pair", "--corpus", p(&pl.corpus), "--out", p(&filtered), "--max-improvement", "--split-out", p(&split)]);
    let all = std::fs::read_to_string(&pl.pairs).unwrap().lines().count();
    let max = std::fs::read_to_string(&filtered).unwrap().lines().count();
    assert!(max > 0 && max < all, "{max} of {all}");
    let sp: Value = serde_json::from_str(&std::fs::read_to_string(&split).unwrap()).unwrap();
    assert_eq!(sp["test_inputs"].as_array().unwrap().len(), 20);
    assert_eq!(editvq(&["pair", "--corpus", p(&pl.corpus), "--out", p(&filtered), "--min-speedup", "0.5"]).status.code(), Some(1));
}

#[test]
fn train_eval_suggest_pca_round_trip() {
    let pl = small_corpus();
    let ck = train(&pl, "edit-vqvae", "vq.ckpt");
    let history = pl.root.join("h.csv");
    let again = pl.root.join("vq2.ckpt");
    ok(&[
        "train", "--corpus", p(&pl.corpus), "--pairs", p(&pl.pairs), "--out", p(&again),
        "--config", p(&pl.config), "--model", "edit-vqvae", "--d-model", "16", "--layers", "1",
        "--codebook-size", "4", "--epochs", "1", "--max-steps", "2", "--valid-limit", "8",
        "--history", p(&history),
    ]);
    assert_eq!(std::fs::read(&ck).unwrap(), std::fs::read(&again).unwrap());
    assert!(std::fs::read_to_string(&history).unwrap().starts_with("epoch,step"));

    let report = pl.root.join("eval.json");
    ok(&[
        "eval", "--checkpoint", p(&ck), "--corpus", p(&pl.corpus), "--pairs", p(&pl.pairs),
        "--out", p(&report), "--max-len", "40",
    ]);
    let r: Value = serde_json::from_str(&std::fs::read_to_string(&report).unwrap()).unwrap();
    for section in ["average", "maximum"] {
        for (k, v) in r[section].as_object().unwrap() {
            let v = v.as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v), "{section}.{k} = {v}");
        }
    }
    let d = r["diversity"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&d));

    let src = pl.root.join("slow.ml");
    std::fs::write(&src, "let a = [3, 1, 2];\nlet s = 0;\nfor i in range(len(a)) { s = s + a[i]; }\nprint(s);\n").unwrap();
    let out = ok(&["suggest", "--checkpoint", p(&ck), "--source", p(&src), "--max-len", "30", "--json"]);
    let resp: Value = serde_json::from_slice(&out.stdout).unwrap();
    let s = resp["suggestions"].as_array().unwrap();
    assert_eq!(s.len(), 4);
    let lps: Vec<f64> = s.iter().map(|x| x["log_prob"].as_f64().unwrap()).collect();
    assert!(lps.windows(2).all(|w| w[0] >= w[1]), "ranked: {lps:?}");
    let text = ok(&["suggest", "--checkpoint", p(&ck), "--source", p(&src), "--latents", "0,1", "--max-len", "30"]);
    assert_eq!(String::from_utf8(text.stdout).unwrap().matches("# latent").count(), 2);

    let csv = pl.root.join("pca.csv");
    ok(&["pca", "--checkpoint", p(&ck), "--corpus", p(&pl.corpus), "--pairs", p(&pl.pairs), "--out", p(&csv), "--set", "all"]);
    let body = std::fs::read_to_string(&csv).unwrap();
    assert!(body.lines().count() > 1);
}

#[test]
fn pca_rejects_models_without_codebook() {
    let pl = small_corpus();
    let ck = train(&pl, "seq2seq", "s.ckpt");
    let csv = pl.root.join("pca.csv");
    let out = editvq(&["pca", "--checkpoint", p(&ck), "--corpus", p(&pl.corpus), "--pairs", p(&pl.pairs), "--out", p(&csv)]);
    assert_eq!(out.status.code(), Some(2));
}
