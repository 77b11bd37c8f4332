//! Alignment pre-training: the detection loss plus cosine distances between
//! the projected scene embedding and frozen text and image embeddings.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::checkpoint::{Checkpoint, CheckpointKind, RngState};
use crate::clip::{cosine_similarity, EmbeddingStore, Modality};
use crate::data::{augment, AugmentConfig, SceneRecord};
use crate::detector::{detection_loss, DetectionParts, DetectionTargets};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, SceneModel};
use crate::nn::{accumulate, zero_grads, Adam, AdamConfig, ForwardCtx, ParamStore};
use crate::rng;
use crate::scene_encoder::SceneEmbedding;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub alpha: f64,
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub decoupled_weight_decay: bool,
    pub seed: u64,
    /// `None` disables augmentation.
    pub augment: Option<AugmentConfig>,
    /// Steps in the running average that picks the best checkpoint.
    pub best_window: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            alpha: 0.02,
            beta: 0.02,
            epochs: 6,
            batch_size: 16,
            learning_rate: 1e-4,
            weight_decay: 1e-5,
            decoupled_weight_decay: false,
            seed: 0,
            augment: Some(AugmentConfig::default()),
            best_window: 10,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config("alpha and beta must be non-negative".into()));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.weight_decay < 0.0 {
            return Err(Error::Config("learning rate and batch size must be positive".into()));
        }
        Ok(())
    }
}

/// `1 − u·v/(‖u‖‖v‖)`; zero-norm inputs are an error.
pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok(1.0 - dot / (nu * nv))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PretrainParts {
    pub det: f64,
    pub text: f64,
    pub image: f64,
}

impl PretrainParts {
    pub fn recombine(&self, alpha: f64, beta: f64) -> f64 {
        self.det + alpha * self.text + beta * self.image
    }

    pub fn components(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("det".to_string(), self.det),
            ("text".to_string(), self.text),
            ("image".to_string(), self.image),
        ])
    }
}

pub struct PretrainLoss<'g, 'p> {
    pub total: Var<'g, 'p>,
    pub parts: PretrainParts,
}

/// `det + α·cos_dist(z_aligned, z_text) + β·cos_dist(z_aligned, z_image)`.
pub fn pretrain_loss<'g, 'p>(
    scene: &SceneEmbedding<'g, 'p>,
    z_text: &[f64],
    z_image: &[f64],
    det: Var<'g, 'p>,
    alpha: f64,
    beta: f64,
) -> Result<PretrainLoss<'g, 'p>> {
    let g = det.graph();
    let z = scene.z_aligned;
    let width = z.shape().1;
    if z_text.len() != width || z_image.len() != width {
        return Err(Error::Config(format!("alignment targets must have {width} entries")));
    }
    let zv = z.value();
    cosine_distance(zv.data(), z_text)?;
    cosine_distance(zv.data(), z_image)?;
    let text = z.cosine_distance(g.constant(Matrix::row_vector(z_text.to_vec())));
    let image = z.cosine_distance(g.constant(Matrix::row_vector(z_image.to_vec())));
    let parts = PretrainParts { det: det.value().item(), text: text.value().item(), image: image.value().item() };
    let total = det.add(text.scale(alpha)).add(image.scale(beta));
    Ok(PretrainLoss { total, parts })
}

/// One training-log record, averaged over the batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: u64,
    pub l_total: f64,
    pub l_det: f64,
    pub l_text: f64,
    pub l_image: f64,
}

pub struct PretrainOutcome {
    pub model: SceneModel,
    pub final_checkpoint: Checkpoint,
    pub best_checkpoint: Checkpoint,
    pub best_step: u64,
    pub log: Vec<StepLog>,
    pub detection: Vec<DetectionParts>,
}

/// Sample order within one epoch.
pub(crate) fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed, &[rng::tag::SHUFFLE, epoch as u64]));
    order
}

/// Seed for the per-sample augmentation or dropout stream.
pub(crate) fn sample_seed(seed: u64, tag: u64, step: u64, slot: usize) -> u64 {
    rng::stream(seed, &[tag, step, slot as u64]).random()
}

pub(crate) fn make_ctx<'g, 'p>(g: &'g Graph<'p>, dropout: f64, seed: u64, step: u64, slot: usize) -> ForwardCtx<'g, 'p> {
    if dropout > 0.0 {
        ForwardCtx::train(g, dropout, rng::stream(seed, &[rng::tag::DROPOUT, step, slot as u64]))
    } else {
        ForwardCtx::eval(g)
    }
}

pub(crate) fn augmented(scene: &SceneRecord, aug: &Option<AugmentConfig>, seed: u64, step: u64, slot: usize) -> SceneRecord {
    match aug {
        Some(a) => augment(scene, &AugmentConfig { seed: sample_seed(seed, rng::tag::AUGMENT, step, slot), ..*a }),
        None => scene.clone(),
    }
}

/// Running mean of the last `window` values.
pub(crate) fn running_mean(values: &[f64], window: usize) -> f64 {
    let w = window.max(1).min(values.len());
    values[values.len() - w..].iter().sum::<f64>() / w as f64
}

fn snapshot(kind: CheckpointKind, config: &serde_json::Value, step: u64, seed: u64, store: &ParamStore) -> Checkpoint {
    Checkpoint {
        kind,
        config: config.clone(),
        step,
        rng: RngState { seed, position: step },
        vocab: None,
        params: store.clone(),
    }
}

pub fn run_pretraining(
    scenes: &[SceneRecord],
    provider: &EmbeddingStore,
    model_cfg: &ModelConfig,
    cfg: &PretrainConfig,
) -> Result<PretrainOutcome> {
    run_pretraining_with(scenes, provider, model_cfg, cfg, &mut |_| {})
}

/// Like [`run_pretraining`], calling `on_step` after every optimizer step.
pub fn run_pretraining_with(
    scenes: &[SceneRecord],
    provider: &EmbeddingStore,
    model_cfg: &ModelConfig,
    cfg: &PretrainConfig,
    on_step: &mut dyn FnMut(&StepLog),
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Empty("pre-training scenes"));
    }
    let targets: Vec<(&[f64], &[f64])> = scenes
        .iter()
        .map(|s| Ok((provider.require(&s.scene_id, Modality::Text)?, provider.require(&s.scene_id, Modality::Image)?)))
        .collect::<Result<_>>()?;

    let (mut store, model) = SceneModel::init(model_cfg, cfg.seed)?;
    let config = serde_json::json!({ "model": model_cfg, "pretrain": cfg });
    let mut adam = Adam::new(
        &store,
        AdamConfig { weight_decay: cfg.weight_decay, decoupled: cfg.decoupled_weight_decay, ..AdamConfig::default() },
    );
    let w = model_cfg.detector.weights;
    let mut log = Vec::new();
    let mut detection = Vec::new();
    let mut totals = Vec::new();
    let mut best = (f64::INFINITY, snapshot(CheckpointKind::Pretrain, &config, 0, cfg.seed, &store), 0u64);
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let order = epoch_order(cfg.seed, epoch, scenes.len());
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = zero_grads(&store);
            let inv = 1.0 / batch.len() as f64;
            let mut sums = PretrainParts::default();
            let mut total = 0.0;
            let mut det_sum = DetectionParts::default();
            for (slot, &i) in batch.iter().enumerate() {
                let scene = augmented(&scenes[i], &cfg.augment, cfg.seed, step, slot);
                let g = Graph::new(&store);
                let ctx = make_ctx(&g, model_cfg.dropout, cfg.seed, step, slot);
                let out = model.forward(&ctx, &scene.cloud)?;
                let t = DetectionTargets::build(&out.proposals, &scene.objects, model_cfg.detector.near_radius, model_cfg.detector.far_radius);
                let det = detection_loss(&out.proposals, &t, &w);
                let (zt, zi) = targets[i];
                let loss = pretrain_loss(&out.encoded.embedding, zt, zi, det.total, cfg.alpha, cfg.beta)?;
                total += loss.total.value().item() * inv;
                sums.det += loss.parts.det * inv;
                sums.text += loss.parts.text * inv;
                sums.image += loss.parts.image * inv;
                det_sum.vote += det.parts.vote * inv;
                det_sum.objectness += det.parts.objectness * inv;
                det_sum.center += det.parts.center * inv;
                det_sum.class += det.parts.class * inv;
                let grad = g.backward(loss.total).into_dense(&store);
                accumulate(&mut grads, &grad, inv);
            }
            adam.step(&mut store, &grads, cfg.learning_rate);
            step += 1;
            let entry = StepLog { step, l_total: total, l_det: sums.det, l_text: sums.text, l_image: sums.image };
            on_step(&entry);
            log.push(entry);
            detection.push(det_sum);
            totals.push(total);
            let avg = running_mean(&totals, cfg.best_window);
            if avg < best.0 {
                best = (avg, snapshot(CheckpointKind::Pretrain, &config, step, cfg.seed, &store), step);
            }
        }
    }
    Ok(PretrainOutcome {
        model,
        final_checkpoint: snapshot(CheckpointKind::Pretrain, &config, step, cfg.seed, &store),
        best_checkpoint: best.1,
        best_step: best.2,
        log,
        detection,
    })
}

/// Rebuilds the scene model described by a checkpoint and loads its weights.
pub fn load_scene_model(ckpt: &Checkpoint) -> Result<(ParamStore, SceneModel)> {
    let model_cfg: ModelConfig = serde_json::from_value(ckpt.config["model"].clone())
        .map_err(|e| Error::Checkpoint(format!("model config: {e}")))?;
    let (mut store, model) = SceneModel::init(&model_cfg, 0)?;
    store
        .copy_namespaces(&ckpt.params, &crate::model::SCENE_NAMESPACES)
        .map_err(Error::Checkpoint)?;
    Ok((store, model))
}

/// `z_scene` and `z_aligned` of every scene, without augmentation or dropout.
pub fn embed_scenes(store: &ParamStore, model: &SceneModel, scenes: &[SceneRecord]) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    scenes
        .iter()
        .map(|s| {
            let g = Graph::new(store);
            let out = model.forward(&ForwardCtx::eval(&g), &s.cloud)?;
            let e = &out.encoded.embedding;
            Ok((e.z_scene.value().data().to_vec(), e.z_aligned.value().data().to_vec()))
        })
        .collect()
}

/// Mean cosine similarity of `z_aligned` to the text and image targets.
pub fn alignment_similarity(
    store: &ParamStore,
    model: &SceneModel,
    scenes: &[SceneRecord],
    provider: &EmbeddingStore,
) -> Result<(f64, f64)> {
    let emb = embed_scenes(store, model, scenes)?;
    let (mut t, mut i) = (0.0, 0.0);
    for (s, (_, z)) in scenes.iter().zip(&emb) {
        t += cosine_similarity(z, provider.require(&s.scene_id, Modality::Text)?);
        i += cosine_similarity(z, provider.require(&s.scene_id, Modality::Image)?);
    }
    let n = scenes.len() as f64;
    Ok((t / n, i / n))
}
