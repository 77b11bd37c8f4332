use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use log::info;
use serde_json::{json, Value};

use clip3d::checkpoint::{Checkpoint, CheckpointKind};
use clip3d::clip::{load_embeddings, scene_stub_embeddings, write_embeddings, WordTable};
use clip3d::data::classes::scene_type_names;
use clip3d::data::{build_answer_vocab, split_qa, synthetic_corpus, write_qa_index, write_scene, SceneRecord};
use clip3d::metrics::evaluate as score;
use clip3d::model::{ModelConfig, SceneModel};
use clip3d::nn::ParamStore;
use clip3d::pretrain::{alignment_similarity, embed_scenes, load_scene_model, run_pretraining_with, PretrainConfig};
use clip3d::projection::{silhouette, tsne, TsneConfig};
use clip3d::vqa::{
    load_vqa_model, predict_all, read_predictions, run_finetuning_with, write_predictions, FinetuneConfig, FinetuneData,
    PredictionRecord, SceneInit, VqaConfig,
};

use crate::config::{embeddings_path, load_questions, load_scenes, output_dir, output_file, preset, read_config, section, seed};
use crate::{EmbedArgs, EvaluateArgs, FinetuneArgs, GenArgs, Preset, PretrainArgs, ProjectArgs};

/// Appends JSON lines, remembering the first write failure.
struct JsonLog {
    out: BufWriter<File>,
    error: Option<std::io::Error>,
}

impl JsonLog {
    fn create(path: &Path) -> Result<Self> {
        let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
        Ok(JsonLog { out: BufWriter::new(f), error: None })
    }

    fn push(&mut self, v: &impl serde::Serialize) {
        if self.error.is_none() {
            let line = serde_json::to_string(v).expect("serializable log entry");
            if let Err(e) = writeln!(self.out, "{line}") {
                self.error = Some(e);
            }
        }
    }

    fn finish(mut self) -> Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e).context("writing training log");
        }
        self.out.flush().context("writing training log")
    }
}

pub fn gen_synthetic(a: &GenArgs) -> Result<String> {
    if a.count == 0 {
        bail!("--count must be at least 1");
    }
    let types: Vec<&str> = if a.types.is_empty() { scene_type_names() } else { a.types.iter().map(String::as_str).collect() };
    let (scenes, qa) = synthetic_corpus(a.count, &types, a.seed)?;
    output_dir(&a.out, a.force)?;
    let dir = a.out.join("scenes");
    if dir.exists() {
        fs::remove_dir_all(&dir).with_context(|| format!("clearing {}", dir.display()))?;
    }
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    for s in &scenes {
        write_scene(dir.join(format!("{}.json", s.scene_id)), s, &qa)?;
    }
    write_embeddings(a.out.join("embeddings.jsonl"), &scene_stub_embeddings(&scenes)?)?;
    write_qa_index(a.out.join("qa.json"), &qa)?;
    Ok(json!({ "scenes": scenes.len(), "questions": qa.len(), "out": a.out }).to_string())
}

fn model_preset(p: Preset) -> ModelConfig {
    match p {
        Preset::Desk => ModelConfig::default(),
        Preset::Toy => ModelConfig::toy(),
    }
}

pub fn pretrain(a: &PretrainArgs) -> Result<String> {
    let config = read_config(a.config.as_deref())?;
    let model_cfg: ModelConfig = section(&model_preset(preset(a.preset, &config)?), &config, "model")?;
    let mut cfg: PretrainConfig = section(&PretrainConfig::default(), &config, "pretrain")?;
    cfg.seed = seed(a.seed, &config, "pretrain")?;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = a.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = a.beta {
        cfg.beta = v;
    }
    if a.no_augment {
        cfg.augment = None;
    }
    cfg.validate()?;
    let ds = load_scenes(&a.data)?;
    let emb = embeddings_path(a.embeddings.as_deref(), &config, &a.data);
    let provider = load_embeddings(&emb).with_context(|| format!("loading embeddings from {}", emb.display()))?;
    output_dir(&a.out, a.force)?;
    fs::write(a.out.join("config.json"), serde_json::to_string_pretty(&json!({ "model": model_cfg, "pretrain": cfg }))?)?;

    let mut log = JsonLog::create(&a.out.join("log.jsonl"))?;
    let outcome = run_pretraining_with(&ds.scenes, &provider, &model_cfg, &cfg, &mut |l| {
        log.push(l);
        if l.step % 10 == 0 {
            info!("step {} loss {:.4} (det {:.4}, text {:.4}, image {:.4})", l.step, l.l_total, l.l_det, l.l_text, l.l_image);
        }
    })?;
    log.finish()?;
    let last = a.out.join("final.ckpt");
    outcome.final_checkpoint.save(&last)?;
    outcome.best_checkpoint.save(a.out.join("best.ckpt"))?;
    let (store, model) = load_scene_model(&outcome.final_checkpoint)?;
    let (text, image) = alignment_similarity(&store, &model, &ds.scenes, &provider)?;
    Ok(json!({
        "steps": outcome.log.len(),
        "final_loss": outcome.log.last().map(|l| l.l_total),
        "best_step": outcome.best_step,
        "text_similarity": text,
        "image_similarity": image,
        "checkpoint": last,
    })
    .to_string())
}

/// Scene-model configuration recorded in a pre-training or fine-tuning checkpoint.
fn checkpoint_model(ckpt: &Checkpoint) -> Result<ModelConfig> {
    let v = match ckpt.kind {
        CheckpointKind::Pretrain => &ckpt.config["model"],
        CheckpointKind::Vqa => &ckpt.config["vqa"]["model"],
    };
    serde_json::from_value(v.clone()).context("checkpoint model configuration")
}

pub fn finetune(a: &FinetuneArgs) -> Result<String> {
    let config = read_config(a.config.as_deref())?;
    let p = preset(a.preset, &config)?;
    let base = match p {
        Preset::Desk => VqaConfig::default(),
        Preset::Toy => VqaConfig::toy(),
    };
    let mut vqa: VqaConfig = section(&base, &config, "vqa")?;
    let ckpt = match &a.checkpoint {
        Some(path) => Some(Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?),
        None => None,
    };
    if let Some(c) = &ckpt {
        vqa.model = checkpoint_model(c)?;
    }
    let mut cfg: FinetuneConfig = section(&FinetuneConfig::default(), &config, "finetune")?;
    cfg.seed = seed(a.seed, &config, "finetune")?;
    if let Some(v) = a.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = a.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = a.lr {
        cfg.learning_rate = v;
    }
    if a.no_augment {
        cfg.augment = None;
    }
    if a.no_decay {
        cfg.lr_decay = None;
    }
    cfg.validate()?;
    let held_out = match a.held_out {
        Some(n) => n,
        None => config.get("held_out").map(|v| v.as_u64().context("held_out must be an integer")).transpose()?.unwrap_or(0) as usize,
    };
    let ds = load_scenes(&a.data)?;
    let qa = load_questions(a.qa.as_deref(), Some(&a.data), Some(&ds))?;
    let (train, test) = split_qa(&qa, held_out, cfg.seed)?;
    let vocab = build_answer_vocab(&train)?;
    output_dir(&a.out, a.force)?;
    fs::write(a.out.join("config.json"), serde_json::to_string_pretty(&json!({ "vqa": vqa, "finetune": cfg, "held_out": held_out }))?)?;
    write_qa_index(a.out.join("train_qa.json"), &train)?;
    write_qa_index(a.out.join("test_qa.json"), &test)?;

    let words = WordTable::default();
    let data = FinetuneData { scenes: &ds.scenes, qa: &train, vocab: &vocab, words: &words };
    let init = match &ckpt {
        Some(c) => SceneInit::Pretrained(c),
        None => SceneInit::Scratch,
    };
    let mut log = JsonLog::create(&a.out.join("log.jsonl"))?;
    let outcome = run_finetuning_with(&data, init, &vqa, &cfg, &mut |l| {
        log.push(l);
        if l.step % 10 == 0 {
            info!("step {} loss {:.4} {:?}", l.step, l.l_total, l.parts);
        }
    })?;
    log.finish()?;
    let last = a.out.join("final.ckpt");
    outcome.checkpoint.save(&last)?;
    outcome.best_checkpoint.save(a.out.join("best.ckpt"))?;
    let preds = predict_all(&outcome.store, &outcome.model, &data)?;
    let pairs = preds.iter().zip(&train).map(|(p, r)| p.eval_pair(r)).collect::<clip3d::Result<Vec<_>>>()?;
    Ok(json!({
        "mode": if ckpt.is_some() { "pretrained" } else { "scratch" },
        "steps": outcome.log.len(),
        "final_loss": outcome.log.last().map(|l| l.l_total),
        "train_questions": train.len(),
        "held_out_questions": test.len(),
        "train_em1": score(&pairs)?.em1,
        "checkpoint": last,
    })
    .to_string())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<String> {
    let (preds, qa) = if let Some(path) = &a.checkpoint {
        let Some(data) = &a.data else { bail!("--data is required with --checkpoint") };
        let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
        let (store, model, vocab) = load_vqa_model(&ckpt)?;
        let ds = load_scenes(data)?;
        let qa = load_questions(a.qa.as_deref(), Some(data), Some(&ds))?;
        let words = WordTable::default();
        let preds = predict_all(&store, &model, &FinetuneData { scenes: &ds.scenes, qa: &qa, vocab: &vocab, words: &words })?;
        (preds, qa)
    } else {
        let path = a.predictions.as_ref().expect("clap enforces one source");
        let preds = read_predictions(path)?;
        let ds = match (&a.qa, &a.data) {
            (None, Some(d)) if !d.join("qa.json").is_file() => Some(load_scenes(d)?),
            _ => None,
        };
        (preds, load_questions(a.qa.as_deref(), a.data.as_deref(), ds.as_ref())?)
    };
    output_dir(&a.out, a.force)?;
    if a.checkpoint.is_some() {
        write_predictions(a.out.join("predictions.jsonl"), &preds)?;
    }
    let by_id: HashMap<&str, &clip3d::data::QARecord> = qa.iter().map(|r| (r.question_id.as_str(), r)).collect();
    let pairs = preds
        .iter()
        .map(|p: &PredictionRecord| {
            let r = by_id.get(p.question_id.as_str()).with_context(|| format!("no question {:?} in the references", p.question_id))?;
            Ok(p.eval_pair(r)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = score(&pairs)?;
    fs::write(a.out.join("report.json"), serde_json::to_string_pretty(&report)?)?;
    fs::write(a.out.join("table.txt"), report.table())?;
    eprint!("{}", report.table());
    Ok(json!({ "samples": pairs.len(), "metrics": report.summary() }).to_string())
}

/// Scene-model weights from either checkpoint kind.
fn scene_weights(path: &Path) -> Result<(ParamStore, SceneModel)> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(match ckpt.kind {
        CheckpointKind::Pretrain => load_scene_model(&ckpt)?,
        CheckpointKind::Vqa => {
            let (store, model, _) = load_vqa_model(&ckpt)?;
            (store, model.scene)
        }
    })
}

pub fn embed(a: &EmbedArgs) -> Result<String> {
    let (store, model) = scene_weights(&a.checkpoint)?;
    let ds = load_scenes(&a.data)?;
    output_file(&a.out, a.force)?;
    let emb = embed_scenes(&store, &model, &ds.scenes)?;
    let mut out = String::new();
    for (s, (z, za)) in ds.scenes.iter().zip(&emb) {
        let line: Value = json!({ "scene_id": s.scene_id, "scene_type": s.scene_type, "z_scene": z, "z_aligned": za });
        out.push_str(&line.to_string());
        out.push('\n');
    }
    fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;
    Ok(json!({ "scenes": ds.scenes.len(), "out": a.out }).to_string())
}

fn type_labels(scenes: &[SceneRecord]) -> Vec<usize> {
    let mut names: Vec<&str> = scenes.iter().map(|s| s.scene_type.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    scenes.iter().map(|s| names.binary_search(&s.scene_type.as_str()).expect("present")).collect()
}

pub fn project(a: &ProjectArgs) -> Result<String> {
    let ds = load_scenes(&a.data)?;
    let tcfg = TsneConfig { perplexity: a.perplexity, iterations: a.iterations, seed: a.seed, ..TsneConfig::default() };
    if (ds.scenes.len() as f64) < a.perplexity + 1.0 {
        bail!("{} scenes are too few for perplexity {}", ds.scenes.len(), a.perplexity);
    }
    let (store, model) = match (&a.checkpoint, a.random_init) {
        (Some(p), _) => scene_weights(p)?,
        (None, Some(p)) => SceneModel::init(&model_preset(p), a.seed)?,
        (None, None) => unreachable!("clap enforces one weight source"),
    };
    output_dir(&a.out, a.force)?;
    let z: Vec<Vec<f64>> = embed_scenes(&store, &model, &ds.scenes)?.into_iter().map(|e| e.0).collect();
    let labels = type_labels(&ds.scenes);
    let result = tsne(&z, &tcfg)?;
    let mut tsv = String::from("scene_id\tx\ty\tscene_type\n");
    for (s, c) in ds.scenes.iter().zip(&result.coords) {
        tsv.push_str(&format!("{}\t{}\t{}\t{}\n", s.scene_id, c[0], c[1], s.scene_type));
    }
    fs::write(a.out.join("projection.tsv"), tsv)?;
    let kl: String = result.kl.iter().enumerate().map(|(i, v)| format!("{}\t{v}\n", i + 1)).collect();
    fs::write(a.out.join("kl.tsv"), format!("iteration\tkl\n{kl}"))?;
    crate::plot::scatter(&a.out.join("projection.png"), &result.coords, &labels)?;
    let sil = if labels.iter().any(|&l| l != labels[0]) { Some(silhouette(&z, &labels)?) } else { None };
    Ok(json!({
        "scenes": ds.scenes.len(),
        "final_kl": result.kl.last(),
        "silhouette": sil,
        "out": a.out,
    })
    .to_string())
}
