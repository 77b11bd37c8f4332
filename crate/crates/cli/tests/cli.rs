use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn clip3d(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_clip3d")).args(args).env_remove("CLIP3D_EMBED_PATH").output().expect("run binary")
}

fn ok(args: &[&str]) -> Value {
    let out = clip3d(args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("summary is JSON")
}

fn error_of(out: &Output) -> Value {
    assert!(!out.status.success());
    let line = String::from_utf8_lossy(&out.stderr);
    let last = line.lines().last().expect("an error line");
    serde_json::from_str::<Value>(last).expect("error is JSON")["error"].clone()
}

fn gen(dir: &Path, count: usize, seed: u64) {
    ok(&["gen-synthetic", "--count", &count.to_string(), "--seed", &seed.to_string(), "--out", dir.to_str().unwrap()]);
}

fn read_tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = walk(dir).into_iter().map(|p| (p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap())).collect();
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

#[test]
fn gen_synthetic_layout_and_reproducibility() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    gen(&a, 3, 5);
    gen(&b, 3, 5);
    assert_eq!(fs::read_dir(a.join("scenes")).unwrap().count(), 3);
    let emb = fs::read_to_string(a.join("embeddings.jsonl")).unwrap();
    assert_eq!(emb.lines().count(), 6);
    assert!(a.join("qa.json").is_file());
    assert_eq!(read_tree(&a), read_tree(&b));

    let c = tmp.path().join("c");
    gen(&c, 3, 6);
    assert_ne!(read_tree(&a), read_tree(&c));
}

#[test]
fn refuses_to_overwrite_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    gen(&d, 1, 0);
    let out = clip3d(&["gen-synthetic", "--count", "1", "--seed", "0", "--out", d.to_str().unwrap()]);
    let err = error_of(&out);
    assert_eq!(err["kind"], "cli");
    assert!(err["message"].as_str().unwrap().contains("--force"));
    ok(&["gen-synthetic", "--count", "1", "--seed", "0", "--out", d.to_str().unwrap(), "--force"]);
}

#[test]
fn failures_are_json_lines() {
    let tmp = tempfile::tempdir().unwrap();
    let out = clip3d(&["pretrain", "--data", tmp.path().join("missing").to_str().unwrap(), "--out", "x", "--seed", "0"]);
    let err = error_of(&out);
    assert!(err["kind"].is_string() && err["message"].is_string());

    let usage = clip3d(&["finetune", "--data", "x", "--out", "y"]);
    assert_eq!(usage.status.code(), Some(2));
    assert_eq!(error_of(&usage)["kind"], "usage");

    let d = tmp.path().join("d");
    gen(&d, 1, 0);
    let no_seed = clip3d(&["pretrain", "--data", d.to_str().unwrap(), "--out", tmp.path().join("p").to_str().unwrap()]);
    assert!(error_of(&no_seed)["message"].as_str().unwrap().contains("seed"));
}

#[test]
fn evaluate_identical_predictions_scores_one() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().join("d");
    gen(&d, 2, 1);
    let qa: Value = serde_json::from_str(&fs::read_to_string(d.join("qa.json")).unwrap()).unwrap();
    let records = qa.as_array().cloned().unwrap();
    let mut lines = String::new();
    for r in &records {
        let answer = r["answers"][0].clone();
        let b = serde_json::json!({ "center": r["boxes"][0]["center"], "size": r["boxes"][0]["size"] });
        let pred = serde_json::json!({
            "scene_id": r["scene_id"],
            "question_id": r["question_id"],
            "answer_top1": answer,
            "answer_top10": [answer],
            "bbox": b,
            "class_probs": [],
        });
        lines.push_str(&pred.to_string());
        lines.push('\n');
    }
    let preds = tmp.path().join("preds.jsonl");
    fs::write(&preds, lines).unwrap();
    let out = tmp.path().join("eval");
    let summary = ok(&["evaluate", "--predictions", preds.to_str().unwrap(), "--data", d.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert_eq!(summary["samples"].as_u64().unwrap() as usize, records.len());
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["em1"], 1.0);
}

#[test]
fn toy_pipeline_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let p = |s: &str| tmp.path().join(s).to_str().unwrap().to_string();
    gen(&tmp.path().join("data"), 6, 2);

    let pre = ok(&["pretrain", "--data", &p("data"), "--out", &p("pre"), "--preset", "toy", "--seed", "1", "--epochs", "1", "--batch-size", "3"]);
    assert_eq!(pre["steps"], 2);
    assert!(Path::new(&p("pre/final.ckpt")).is_file() && Path::new(&p("pre/best.ckpt")).is_file());
    assert_eq!(fs::read_to_string(p("pre/log.jsonl")).unwrap().lines().count(), 2);

    let cfg = tmp.path().join("ft.json");
    fs::write(&cfg, r#"{"preset": "toy", "finetune": {"seed": 3, "epochs": 1, "batch_size": 8}, "held_out": 4}"#).unwrap();
    let ft = ok(&["finetune", "--data", &p("data"), "--out", &p("ft"), "--checkpoint", &p("pre/final.ckpt"), "--config", cfg.to_str().unwrap()]);
    assert_eq!(ft["mode"], "pretrained");
    assert_eq!(ft["held_out_questions"], 4);
    let scratch = ok(&["finetune", "--data", &p("data"), "--out", &p("fs"), "--from-scratch", "--config", cfg.to_str().unwrap()]);
    assert_eq!(scratch["mode"], "scratch");
    assert_eq!(scratch["train_questions"], ft["train_questions"]);

    let ev = ok(&["evaluate", "--checkpoint", &p("ft/final.ckpt"), "--data", &p("data"), "--qa", &p("ft/test_qa.json"), "--out", &p("ev")]);
    assert_eq!(ev["samples"], 4);
    assert_eq!(fs::read_to_string(p("ev/predictions.jsonl")).unwrap().lines().count(), 4);
    let again = ok(&["evaluate", "--predictions", &p("ev/predictions.jsonl"), "--qa", &p("ft/test_qa.json"), "--out", &p("ev2")]);
    assert_eq!(again["metrics"], ev["metrics"]);

    for ckpt in ["pre/final.ckpt", "ft/final.ckpt"] {
        let out = p(&format!("{}.emb.jsonl", ckpt.replace('/', "_")));
        ok(&["embed", "--checkpoint", &p(ckpt), "--data", &p("data"), "--out", &out]);
        let rows: Vec<Value> = fs::read_to_string(&out).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0]["z_aligned"].as_array().unwrap().len(), 512);
        assert_eq!(rows[0]["z_scene"].as_array().unwrap().len(), 8);
    }

    let pr = ok(&["project", "--checkpoint", &p("pre/final.ckpt"), "--data", &p("data"), "--out", &p("proj"), "--perplexity", "2", "--iterations", "300", "--seed", "4"]);
    assert_eq!(pr["scenes"], 6);
    let tsv = fs::read_to_string(p("proj/projection.tsv")).unwrap();
    assert_eq!(tsv.lines().count(), 7);
    assert_eq!(fs::read_to_string(p("proj/kl.tsv")).unwrap().lines().count(), 301);
    assert!(fs::metadata(p("proj/projection.png")).unwrap().len() > 0);
    let rnd = ok(&["project", "--random-init", "toy", "--data", &p("data"), "--out", &p("proj_rnd"), "--perplexity", "2", "--iterations", "50", "--seed", "4"]);
    assert!(rnd["silhouette"].is_number());
}
