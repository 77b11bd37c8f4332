//! Run configuration: command flags override the JSON config file, which
//! overrides environment variables, which override built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde_json::Value;

use clip3d::clip::EMBED_PATH_ENV;
use clip3d::data::{load_dataset, load_qa_dataset, read_qa_index, Dataset, QARecord};

use crate::Preset;

pub fn read_config(path: Option<&Path>) -> Result<Value> {
    let Some(path) = path else { return Ok(Value::Object(Default::default())) };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let v: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    if !v.is_object() {
        bail!("config {} must hold a JSON object", path.display());
    }
    Ok(v)
}

/// Recursively overlays `top` onto `base`; objects merge, everything else replaces.
pub fn merge(base: Value, top: &Value) -> Value {
    match (base, top) {
        (Value::Object(mut b), Value::Object(t)) => {
            for (k, v) in t {
                let merged = merge(b.remove(k).unwrap_or(Value::Null), v);
                b.insert(k.clone(), merged);
            }
            Value::Object(b)
        }
        (_, t) => t.clone(),
    }
}

/// `base` with the `key` section of the config overlaid.
pub fn section<T: Clone + serde::Serialize + serde::de::DeserializeOwned>(base: &T, config: &Value, key: &str) -> Result<T> {
    match config.get(key) {
        Some(v) => serde_json::from_value(merge(serde_json::to_value(base)?, v)).with_context(|| format!("config section {key:?}")),
        None => Ok(base.clone()),
    }
}

pub fn preset(flag: Option<Preset>, config: &Value) -> Result<Preset> {
    if let Some(p) = flag {
        return Ok(p);
    }
    match config.get("preset") {
        Some(v) => serde_json::from_value(v.clone()).context("config key \"preset\""),
        None => Ok(Preset::Desk),
    }
}

/// The seed must be given explicitly, by flag or in the config section.
pub fn seed(flag: Option<u64>, config: &Value, key: &str) -> Result<u64> {
    if let Some(s) = flag {
        return Ok(s);
    }
    match config.get(key).and_then(|s| s.get("seed")) {
        Some(v) => v.as_u64().with_context(|| format!("{key}.seed must be a non-negative integer")),
        None => bail!("a seed is required: pass --seed or set {key}.seed in the config"),
    }
}

pub fn embeddings_path(flag: Option<&Path>, config: &Value, data: &Path) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = config.get("embeddings").and_then(Value::as_str) {
        return PathBuf::from(p);
    }
    if let Some(p) = std::env::var_os(EMBED_PATH_ENV) {
        return PathBuf::from(p);
    }
    data.join("embeddings.jsonl")
}

/// Scenes under `<data>/scenes` when present, else `data` itself.
pub fn load_scenes(data: &Path) -> Result<Dataset> {
    let dir = data.join("scenes");
    let path = if dir.is_dir() { dir } else { data.to_path_buf() };
    load_dataset(&path).with_context(|| format!("loading scenes from {}", path.display()))
}

/// Explicit index, else `<data>/qa.json`, else the questions in the scene files.
pub fn load_questions(qa: Option<&Path>, data: Option<&Path>, dataset: Option<&Dataset>) -> Result<Vec<QARecord>> {
    if let Some(p) = qa {
        return load_qa_dataset(p).with_context(|| format!("loading questions from {}", p.display()));
    }
    if let Some(d) = data {
        let index = d.join("qa.json");
        if index.is_file() {
            return read_qa_index(&index).with_context(|| format!("loading questions from {}", index.display()));
        }
    }
    match dataset {
        Some(ds) => Ok(ds.qa.clone()),
        None => bail!("no question source: pass --qa or --data"),
    }
}

/// Creates `dir`, refusing to reuse an existing one unless `force` is set.
pub fn output_dir(dir: &Path, force: bool) -> Result<()> {
    if dir.exists() && !force {
        bail!("output {} already exists; pass --force to overwrite", dir.display());
    }
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn output_file(path: &Path, force: bool) -> Result<()> {
    if path.exists() && !force {
        bail!("output {} already exists; pass --force to overwrite", path.display());
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}
