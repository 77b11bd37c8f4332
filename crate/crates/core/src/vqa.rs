//! Question answering over a scene: question tokens and proposal features
//! are fused by a small transformer, then three heads predict the answer,
//! the referred proposal and the question's object class.

use std::collections::HashMap;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::checkpoint::{Checkpoint, CheckpointKind, RngState};
use crate::clip::{tokenize_question_with, QuestionTokens, WordTable, EMBED_DIM};
use crate::data::{augment_with_transform, AnswerVocabulary, AugmentConfig, QARecord, SceneRecord, NUM_CLASSES};
use crate::detector::{detection_loss, DetectionTargets, ProposalSet};
use crate::error::{Error, Result};
use crate::geometry::{iou, AxisAlignedBox};
use crate::metrics::EvalPair;
use crate::model::{ModelConfig, SceneModel, SCENE_NAMESPACES};
use crate::nn::{accumulate, sinusoidal_positions, zero_grads, Adam, AdamConfig, EncoderLayer, ForwardCtx, Init, Linear, Mlp, ParamStore};
use crate::pretrain::{epoch_order, make_ctx, running_mean, sample_seed};
use crate::rng;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FusionConfig {
    /// Fusion width.
    pub dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub layers: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig { dim: 256, heads: 8, ff_dim: 512, layers: 2 }
    }
}

impl FusionConfig {
    pub fn toy() -> Self {
        FusionConfig { dim: 8, heads: 2, ff_dim: 16, layers: 2 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
#[derive(Default)]
pub struct VqaConfig {
    pub model: ModelConfig,
    pub fusion: FusionConfig,
}


impl VqaConfig {
    pub fn toy() -> Self {
        VqaConfig { model: ModelConfig::toy(), fusion: FusionConfig::toy() }
    }

    /// Width matching the scene side, so proposals enter the fusion unprojected.
    pub fn matched(model: ModelConfig) -> Self {
        let h = model.detector.hidden;
        let heads = if h.is_multiple_of(8) { 8 } else if h.is_multiple_of(4) { 4 } else { 1 };
        VqaConfig { model, fusion: FusionConfig { dim: h, heads, ff_dim: 2 * h, layers: 2 } }
    }
}

pub struct FusedSequence<'g, 'p> {
    pub word_states: Var<'g, 'p>,
    pub object_states: Var<'g, 'p>,
    /// The updated end-of-text state, `1×d_f`.
    pub q_prime: Var<'g, 'p>,
    /// Per layer, per head `(L+k)×(L+k)` attention.
    pub attention: Vec<Vec<Matrix>>,
}

#[derive(Clone, Debug)]
pub struct Fusion {
    pub word_proj: Linear,
    /// `None` when the proposal width already equals the fusion width.
    pub object_proj: Option<Linear>,
    pub layers: Vec<EncoderLayer>,
    dim: usize,
}

impl Fusion {
    pub fn new(init: &mut Init<'_>, object_dim: usize, cfg: &FusionConfig) -> Self {
        Fusion {
            word_proj: Linear::new(init, "fusion.word_proj", EMBED_DIM, cfg.dim),
            object_proj: (object_dim != cfg.dim).then(|| Linear::new(init, "fusion.object_proj", object_dim, cfg.dim)),
            layers: (0..cfg.layers)
                .map(|i| EncoderLayer::new(init, &format!("fusion.layer{i}"), cfg.dim, cfg.heads, cfg.ff_dim))
                .collect(),
            dim: cfg.dim,
        }
    }

    /// Words carry sinusoidal positions, objects none; the sequence is
    /// `[words; objects]` with full self-attention.
    pub fn fuse<'g, 'p>(&self, ctx: &ForwardCtx<'g, 'p>, q: &QuestionTokens, objects: Var<'g, 'p>) -> FusedSequence<'g, 'p> {
        let g = ctx.graph;
        let l = q.len();
        let k = objects.shape().0;
        let words = self
            .word_proj
            .forward(ctx, g.constant(q.embeddings.clone()))
            .add(g.constant(sinusoidal_positions(l, self.dim)));
        let objects = match &self.object_proj {
            Some(p) => p.forward(ctx, objects),
            None => objects,
        };
        let mut x = Var::concat_rows(&[words, objects]);
        let mut attention = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (y, maps) = layer.forward(ctx, x);
            x = y;
            attention.push(maps);
        }
        let word_states = x.slice_rows(0, l);
        FusedSequence { word_states, object_states: x.slice_rows(l, k), q_prime: x.row(q.eot_index), attention }
    }
}

#[derive(Clone, Debug)]
pub struct Heads {
    pub answer: Mlp,
    pub class: Linear,
    pub loc: Linear,
}

impl Heads {
    pub fn new(init: &mut Init<'_>, dim: usize, answers: usize) -> Self {
        Heads {
            answer: Mlp::new(init, "heads.answer", dim, &[dim, answers], false),
            class: Linear::new(init, "heads.class", dim, NUM_CLASSES),
            loc: Linear::new(init, "heads.loc", dim, 1),
        }
    }
}

#[derive(Clone, Debug)]
pub struct VqaModel {
    pub cfg: VqaConfig,
    pub scene: SceneModel,
    pub fusion: Fusion,
    pub heads: Heads,
    pub answers: usize,
}

pub struct VqaForward<'g, 'p> {
    pub proposals: ProposalSet<'g, 'p>,
    pub fused: FusedSequence<'g, 'p>,
    /// `1×n`.
    pub answer_logits: Var<'g, 'p>,
    /// `1×k`.
    pub loc_logits: Var<'g, 'p>,
    /// `1×18`.
    pub class_logits: Var<'g, 'p>,
}

impl VqaModel {
    /// Scene weights come from the `seed` initialization stream (the same
    /// draw pre-training starts from); fusion and heads from the heads stream.
    pub fn init(cfg: &VqaConfig, answers: usize, seed: u64) -> Result<(ParamStore, Self)> {
        if answers == 0 {
            return Err(Error::Empty("answer vocabulary"));
        }
        if cfg.fusion.heads == 0 || !cfg.fusion.dim.is_multiple_of(cfg.fusion.heads) || cfg.fusion.layers == 0 {
            return Err(Error::Config(format!(
                "fusion width {} with {} heads and {} layers",
                cfg.fusion.dim, cfg.fusion.heads, cfg.fusion.layers
            )));
        }
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, &[rng::tag::INIT]);
        let scene = SceneModel::build(&mut Init { store: &mut store, rng: &mut r }, &cfg.model)?;
        let mut r = rng::stream(seed, &[rng::tag::HEADS]);
        let mut init = Init { store: &mut store, rng: &mut r };
        let fusion = Fusion::new(&mut init, cfg.model.detector.hidden, &cfg.fusion);
        let heads = Heads::new(&mut init, cfg.fusion.dim, answers);
        Ok((store, VqaModel { cfg: cfg.clone(), scene, fusion, heads, answers }))
    }

    pub fn forward<'g, 'p>(&self, ctx: &ForwardCtx<'g, 'p>, scene: &SceneRecord, q: &QuestionTokens) -> Result<VqaForward<'g, 'p>> {
        let out = self.scene.forward(ctx, &scene.cloud)?;
        let fused = self.fusion.fuse(ctx, q, out.encoded.objects);
        let answer_logits = self.heads.answer.forward(ctx, fused.q_prime);
        let class_logits = self.heads.class.forward(ctx, fused.q_prime);
        let loc_logits = self.heads.loc.forward(ctx, fused.object_states).transpose();
        Ok(VqaForward { proposals: out.proposals, fused, answer_logits, loc_logits, class_logits })
    }
}

/// Index of the proposal with the highest IoU against `gt`; the lowest index
/// wins ties, so an all-zero row selects proposal 0.
pub fn localization_target(proposals: &[AxisAlignedBox], gt: &AxisAlignedBox) -> Result<usize> {
    if proposals.is_empty() {
        return Err(Error::Empty("proposal set"));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for (i, p) in proposals.iter().enumerate() {
        let v = iou(p, gt);
        if v > best.1 {
            best = (i, v);
        }
    }
    Ok(best.0)
}

/// Cross-entropy of `1×k` logits against one proposal index.
pub fn localization_loss<'g, 'p>(loc_logits: Var<'g, 'p>, target: usize) -> Var<'g, 'p> {
    loc_logits.log_softmax_rows().pick(&[(0, target)]).scale(-1.0)
}

/// Mean over the `n` outputs of binary cross-entropy against the multi-hot
/// answer set.
pub fn answer_loss<'g, 'p>(answer_logits: Var<'g, 'p>, gt: &[usize]) -> Result<Var<'g, 'p>> {
    let n = answer_logits.shape().1;
    if gt.is_empty() {
        return Err(Error::Empty("ground-truth answer set"));
    }
    let mut target = Matrix::zeros(1, n);
    for &a in gt {
        if a >= n {
            return Err(Error::Config(format!("answer index {a} outside vocabulary of {n}")));
        }
        target.set(0, a, 1.0);
    }
    Ok(answer_logits.bce_with_logits(&target).mean())
}

/// Cross-entropy of the `1×18` class logits against the referred class.
pub fn object_class_loss<'g, 'p>(class_logits: Var<'g, 'p>, class: usize) -> Var<'g, 'p> {
    class_logits.log_softmax_rows().pick(&[(0, class)]).scale(-1.0)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FinetuneParts {
    pub det: f64,
    pub obj: f64,
    pub ans: f64,
    pub loc: f64,
}

impl FinetuneParts {
    pub fn recombine(&self) -> f64 {
        self.det + self.obj + self.ans + self.loc
    }

    pub fn components(&self) -> [(&'static str, f64); 4] {
        [("det", self.det), ("obj", self.obj), ("ans", self.ans), ("loc", self.loc)]
    }
}

pub struct FinetuneLoss<'g, 'p> {
    pub total: Var<'g, 'p>,
    pub parts: FinetuneParts,
}

/// Unweighted sum of the four terms.
pub fn finetune_loss<'g, 'p>(det: Var<'g, 'p>, obj: Var<'g, 'p>, ans: Var<'g, 'p>, loc: Var<'g, 'p>) -> FinetuneLoss<'g, 'p> {
    let item = |v: Var<'g, 'p>| v.value().item();
    let parts = FinetuneParts { det: item(det), obj: item(obj), ans: item(ans), loc: item(loc) };
    FinetuneLoss { total: det.add(obj).add(ans).add(loc), parts }
}

/// One training example with everything the loss needs precomputed.
pub struct PreparedSample<'a> {
    pub record: &'a QARecord,
    pub scene: &'a SceneRecord,
    pub tokens: QuestionTokens,
    pub answers: Vec<usize>,
}

/// Resolves scenes, tokenizes questions and encodes answers. Every record
/// must name a known scene and have at least one in-vocabulary answer.
pub fn prepare<'a>(
    scenes: &'a [SceneRecord],
    qa: &'a [QARecord],
    vocab: &AnswerVocabulary,
    words: &WordTable,
) -> Result<Vec<PreparedSample<'a>>> {
    let by_id: HashMap<&str, &SceneRecord> = scenes.iter().map(|s| (s.scene_id.as_str(), s)).collect();
    qa.iter()
        .enumerate()
        .map(|(index, r)| {
            let scene = *by_id
                .get(r.scene_id.as_str())
                .ok_or_else(|| Error::Record { index, message: format!("unknown scene {:?}", r.scene_id) })?;
            Ok(PreparedSample {
                record: r,
                scene,
                tokens: tokenize_question_with(&r.question, words),
                answers: vocab.encode(&r.answers),
            })
        })
        .collect()
}

/// Total loss of one sample, with augmentation applied consistently to the
/// scene and the referred boxes.
pub fn sample_loss<'g, 'p>(
    ctx: &ForwardCtx<'g, 'p>,
    model: &VqaModel,
    sample: &PreparedSample<'_>,
    augment: Option<&AugmentConfig>,
) -> Result<FinetuneLoss<'g, 'p>> {
    let (scene, gt_box) = match augment {
        Some(a) => {
            let (s, t) = augment_with_transform(sample.scene, a);
            (s, sample.record.gt_boxes.first().map(|b| t.apply_box(&b.bbox)))
        }
        None => (sample.scene.clone(), sample.record.gt_boxes.first().map(|b| b.bbox)),
    };
    let out = model.forward(ctx, &scene, &sample.tokens)?;
    let det_cfg = &model.cfg.model.detector;
    let targets = DetectionTargets::build(&out.proposals, &scene.objects, det_cfg.near_radius, det_cfg.far_radius);
    let det = detection_loss(&out.proposals, &targets, &det_cfg.weights).total;
    let g = ctx.graph;
    let zero = || g.constant(Matrix::scalar(0.0));
    let obj = match sample.record.referred_class() {
        Some(c) => object_class_loss(out.class_logits, c),
        None => zero(),
    };
    let ans = answer_loss(out.answer_logits, &sample.answers)?;
    let loc = match gt_box {
        Some(b) => localization_loss(out.loc_logits, localization_target(&out.proposals.boxes(), &b)?),
        None => zero(),
    };
    Ok(finetune_loss(det, obj, ans, loc))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LrDecay {
    pub epoch: usize,
    pub factor: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplies the rate once the given epoch is reached.
    pub lr_decay: Option<LrDecay>,
    pub weight_decay: f64,
    pub decoupled_weight_decay: bool,
    pub seed: u64,
    pub augment: Option<AugmentConfig>,
    pub best_window: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            epochs: 25,
            batch_size: 16,
            learning_rate: 5e-4,
            lr_decay: Some(LrDecay { epoch: 15, factor: 0.1 }),
            weight_decay: 1e-5,
            decoupled_weight_decay: false,
            seed: 0,
            augment: Some(AugmentConfig::default()),
            best_window: 10,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.weight_decay < 0.0 {
            return Err(Error::Config("learning rate and batch size must be positive".into()));
        }
        if let Some(d) = self.lr_decay {
            if !(d.factor > 0.0) {
                return Err(Error::Config("learning-rate decay factor must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn rate_at(&self, epoch: usize) -> f64 {
        match self.lr_decay {
            Some(d) if epoch >= d.epoch => self.learning_rate * d.factor,
            _ => self.learning_rate,
        }
    }
}

/// Where the scene weights come from.
#[derive(Clone, Copy, Debug)]
pub enum SceneInit<'a> {
    Pretrained(&'a Checkpoint),
    Scratch,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinetuneStepLog {
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub l_total: f64,
    pub parts: FinetuneParts,
}

pub struct FinetuneOutcome {
    pub model: VqaModel,
    pub store: ParamStore,
    pub checkpoint: Checkpoint,
    pub best_checkpoint: Checkpoint,
    pub log: Vec<FinetuneStepLog>,
}

pub struct FinetuneData<'a> {
    pub scenes: &'a [SceneRecord],
    pub qa: &'a [QARecord],
    pub vocab: &'a AnswerVocabulary,
    pub words: &'a WordTable,
}

/// Fresh VQA parameters, with the scene namespaces replaced by the
/// checkpoint's weights in pre-trained mode.
pub fn initial_model(init: SceneInit<'_>, cfg: &VqaConfig, answers: usize, seed: u64) -> Result<(ParamStore, VqaModel)> {
    let (mut store, model) = VqaModel::init(cfg, answers, seed)?;
    if let SceneInit::Pretrained(ckpt) = init {
        store.copy_namespaces(&ckpt.params, &SCENE_NAMESPACES).map_err(Error::Checkpoint)?;
    }
    Ok((store, model))
}

fn snapshot(config: &serde_json::Value, step: u64, seed: u64, vocab: &AnswerVocabulary, store: &ParamStore) -> Checkpoint {
    Checkpoint {
        kind: CheckpointKind::Vqa,
        config: config.clone(),
        step,
        rng: RngState { seed, position: step },
        vocab: Some(vocab.answers().to_vec()),
        params: store.clone(),
    }
}

pub fn run_finetuning(data: &FinetuneData<'_>, init: SceneInit<'_>, vqa: &VqaConfig, cfg: &FinetuneConfig) -> Result<FinetuneOutcome> {
    run_finetuning_with(data, init, vqa, cfg, &mut |_| {})
}

/// Like [`run_finetuning`], calling `on_step` after every optimizer step.
pub fn run_finetuning_with(
    data: &FinetuneData<'_>,
    init: SceneInit<'_>,
    vqa: &VqaConfig,
    cfg: &FinetuneConfig,
    on_step: &mut dyn FnMut(&FinetuneStepLog),
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    if data.qa.is_empty() {
        return Err(Error::Empty("fine-tuning QA records"));
    }
    let samples = prepare(data.scenes, data.qa, data.vocab, data.words)?;
    if let Some(i) = samples.iter().position(|s| s.answers.is_empty()) {
        return Err(Error::Record { index: i, message: "no answer in the vocabulary".into() });
    }
    let (mut store, model) = initial_model(init, vqa, data.vocab.len(), cfg.seed)?;
    let config = serde_json::json!({ "vqa": vqa, "finetune": cfg });
    let mut adam = Adam::new(
        &store,
        AdamConfig { weight_decay: cfg.weight_decay, decoupled: cfg.decoupled_weight_decay, ..AdamConfig::default() },
    );
    let mut log = Vec::new();
    let mut totals = Vec::new();
    let mut best = (f64::INFINITY, snapshot(&config, 0, cfg.seed, data.vocab, &store));
    let mut step = 0u64;
    for epoch in 0..cfg.epochs {
        let lr = cfg.rate_at(epoch);
        let order = epoch_order(cfg.seed, epoch, samples.len());
        for batch in order.chunks(cfg.batch_size) {
            let mut grads = zero_grads(&store);
            let inv = 1.0 / batch.len() as f64;
            let mut parts = FinetuneParts::default();
            for (slot, &i) in batch.iter().enumerate() {
                let aug = cfg
                    .augment
                    .map(|a| AugmentConfig { seed: sample_seed(cfg.seed, rng::tag::AUGMENT, step, slot), ..a });
                let g = Graph::new(&store);
                let ctx = make_ctx(&g, vqa.model.dropout, cfg.seed, step, slot);
                let loss = sample_loss(&ctx, &model, &samples[i], aug.as_ref())?;
                parts.det += loss.parts.det * inv;
                parts.obj += loss.parts.obj * inv;
                parts.ans += loss.parts.ans * inv;
                parts.loc += loss.parts.loc * inv;
                accumulate(&mut grads, &g.backward(loss.total).into_dense(&store), inv);
            }
            adam.step(&mut store, &grads, lr);
            step += 1;
            let entry = FinetuneStepLog { step, epoch, lr, l_total: parts.recombine(), parts };
            on_step(&entry);
            log.push(entry);
            totals.push(entry.l_total);
            let avg = running_mean(&totals, cfg.best_window);
            if avg < best.0 {
                best = (avg, snapshot(&config, step, cfg.seed, data.vocab, &store));
            }
        }
    }
    Ok(FinetuneOutcome {
        checkpoint: snapshot(&config, step, cfg.seed, data.vocab, &store),
        best_checkpoint: best.1,
        model,
        store,
        log,
    })
}

/// Rebuilds a fine-tuned model and its vocabulary from a checkpoint.
pub fn load_vqa_model(ckpt: &Checkpoint) -> Result<(ParamStore, VqaModel, AnswerVocabulary)> {
    if ckpt.kind != CheckpointKind::Vqa {
        return Err(Error::Checkpoint("expected a question-answering checkpoint".into()));
    }
    let cfg: VqaConfig = serde_json::from_value(ckpt.config["vqa"].clone())
        .map_err(|e| Error::Checkpoint(format!("vqa config: {e}")))?;
    let vocab = AnswerVocabulary::from(ckpt.vocab.clone().ok_or_else(|| Error::Checkpoint("missing vocabulary".into()))?);
    let (mut store, model) = VqaModel::init(&cfg, vocab.len(), 0)?;
    store
        .copy_namespaces(&ckpt.params, &["detector.", "scene_encoder.", "fusion.", "heads."])
        .map_err(Error::Checkpoint)?;
    Ok((store, model, vocab))
}

#[derive(Clone, Debug, PartialEq)]
pub struct VqaPrediction {
    pub answer: String,
    pub answer_index: usize,
    /// Up to ten answers by decreasing logit.
    pub answer_top10: Vec<String>,
    pub answer_logits: Vec<f64>,
    pub loc_logits: Vec<f64>,
    pub class_logits: Vec<f64>,
    pub class_probs: Vec<f64>,
    pub proposal_index: usize,
    pub predicted_box: AxisAlignedBox,
}

/// Indices sorted by decreasing value, lower index first on ties.
fn ranking(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx
}

pub fn predict(store: &ParamStore, model: &VqaModel, scene: &SceneRecord, q: &QuestionTokens, vocab: &AnswerVocabulary) -> Result<VqaPrediction> {
    if vocab.len() != model.answers {
        return Err(Error::Config(format!("vocabulary of {} for a model with {} answers", vocab.len(), model.answers)));
    }
    let g = Graph::new(store);
    let out = model.forward(&ForwardCtx::eval(&g), scene, q)?;
    let answer_logits = out.answer_logits.value().data().to_vec();
    let loc_logits = out.loc_logits.value().data().to_vec();
    let class_logits = out.class_logits.value().data().to_vec();
    let order = ranking(&answer_logits);
    let proposal_index = ranking(&loc_logits)[0];
    let class_probs = out.class_logits.softmax_rows().value().data().to_vec();
    Ok(VqaPrediction {
        answer: vocab.get(order[0]).to_string(),
        answer_index: order[0],
        answer_top10: order.iter().take(10).map(|&i| vocab.get(i).to_string()).collect(),
        predicted_box: out.proposals.boxes()[proposal_index],
        answer_logits,
        loc_logits,
        class_logits,
        class_probs,
        proposal_index,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoxRecord {
    pub center: [f64; 3],
    pub size: [f64; 3],
}

/// One line of the prediction file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub scene_id: String,
    pub question_id: String,
    pub answer_top1: String,
    pub answer_top10: Vec<String>,
    pub bbox: BoxRecord,
    pub class_probs: Vec<f64>,
}

impl PredictionRecord {
    pub fn new(record: &QARecord, p: &VqaPrediction) -> Self {
        PredictionRecord {
            scene_id: record.scene_id.clone(),
            question_id: record.question_id.clone(),
            answer_top1: p.answer.clone(),
            answer_top10: p.answer_top10.clone(),
            bbox: BoxRecord { center: p.predicted_box.center, size: p.predicted_box.size },
            class_probs: p.class_probs.clone(),
        }
    }

    /// Metric input pairing this prediction with its ground truth.
    pub fn eval_pair(&self, record: &QARecord) -> Result<EvalPair> {
        Ok(EvalPair {
            id: self.question_id.clone(),
            prediction: self.answer_top1.clone(),
            references: record.answers.clone(),
            pred_box: Some(AxisAlignedBox::new(self.bbox.center, self.bbox.size)?),
            gt_box: record.gt_boxes.first().map(|b| b.bbox),
        })
    }
}

/// Predictions for every record, in input order.
pub fn predict_all(
    store: &ParamStore,
    model: &VqaModel,
    data: &FinetuneData<'_>,
) -> Result<Vec<PredictionRecord>> {
    let samples = prepare(data.scenes, data.qa, data.vocab, data.words)?;
    samples
        .iter()
        .map(|s| Ok(PredictionRecord::new(s.record, &predict(store, model, s.scene, &s.tokens, data.vocab)?)))
        .collect()
}

pub fn write_predictions(path: impl AsRef<Path>, records: &[PredictionRecord]) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Json { path: path.to_path_buf(), source: e })?;
        out.write_all(b"\n").expect("writing to a Vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: impl AsRef<Path>) -> Result<Vec<PredictionRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| Error::Json { path: path.to_path_buf(), source: e }))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic_scene;

    fn slab(x0: f64, x1: f64) -> AxisAlignedBox {
        AxisAlignedBox::from_min_max([x0, 0.0, 0.0], [x1, 1.0, 1.0]).unwrap()
    }

    #[test]
    fn localization_target_picks_max_iou() {
        let gt = slab(0.0, 1.0);
        // IoUs 0.1, 0.6, 0.3 against the unit slab.
        let props = [slab(0.9, 1.9), slab(0.0, 1.0 / 0.6), slab(0.0, 1.0 / 0.3)];
        let ious: Vec<f64> = props.iter().map(|p| iou(p, &gt)).collect();
        assert!((ious[1] - 0.6).abs() < 1e-12 && (ious[2] - 0.3).abs() < 1e-12);
        assert_eq!(localization_target(&props, &gt).unwrap(), 1);
        let far = [slab(5.0, 6.0), slab(7.0, 8.0)];
        assert_eq!(localization_target(&far, &gt).unwrap(), 0);
        assert_eq!(localization_target(&[slab(0.0, 1.0), slab(0.0, 1.0)], &gt).unwrap(), 0);
    }

    #[test]
    fn loss_examples() {
        let store = ParamStore::new();
        let g = Graph::new(&store);
        let uniform = localization_loss(g.constant(Matrix::zeros(1, 4)), 2);
        assert!((uniform.value().item() - 4f64.ln()).abs() < 1e-12);
        let sharp = localization_loss(g.constant(Matrix::from_vec(1, 3, vec![-50.0, 50.0, -50.0])), 1);
        assert!(sharp.value().item() < 1e-12);
        let a = answer_loss(g.constant(Matrix::zeros(1, 2)), &[0]).unwrap();
        assert!((a.value().item() - 2f64.ln()).abs() < 1e-12);
        assert!(answer_loss(g.constant(Matrix::zeros(1, 2)), &[]).is_err());
        assert!(answer_loss(g.constant(Matrix::zeros(1, 2)), &[2]).is_err());
        let both = answer_loss(g.constant(Matrix::from_vec(1, 3, vec![9.0, 9.0, -9.0])), &[0, 1]).unwrap();
        let one = answer_loss(g.constant(Matrix::from_vec(1, 3, vec![9.0, -9.0, -9.0])), &[0, 1]).unwrap();
        assert!(both.value().item() < one.value().item());
    }

    #[test]
    fn finetune_sum() {
        let store = ParamStore::new();
        let g = Graph::new(&store);
        let c = |x: f64| g.constant(Matrix::scalar(x));
        let l = finetune_loss(c(1.0), c(2.0), c(3.0), c(4.0));
        assert_eq!(l.total.value().item(), 10.0);
        assert_eq!(l.parts.recombine(), 10.0);
        assert_eq!(finetune_loss(c(0.0), c(0.0), c(0.0), c(0.0)).total.value().item(), 0.0);
    }

    #[test]
    fn fuse_shapes_and_object_symmetry() {
        let (store, model) = VqaModel::init(&VqaConfig::toy(), 3, 1).unwrap();
        assert!(model.fusion.object_proj.is_none());
        let g = Graph::new(&store);
        let ctx = ForwardCtx::eval(&g);
        let q = crate::clip::tokenize_question("is it red?");
        let objs = Matrix::from_vec(3, 8, (0..24).map(|i| ((i * 7) % 11) as f64 / 5.0 - 1.0).collect());
        let a = model.fusion.fuse(&ctx, &q, g.constant(objs.clone()));
        assert_eq!(a.word_states.shape(), (q.len(), 8));
        assert_eq!(a.object_states.shape(), (3, 8));
        let perm = [2, 0, 1];
        let b = model.fusion.fuse(&ctx, &q, g.constant(objs.select_rows(&perm)));
        assert!(a.q_prime.value().max_abs_diff(&b.q_prime.value()) < 1e-5);
        assert!(a.object_states.value().select_rows(&perm).max_abs_diff(&b.object_states.value()) < 1e-9);
        for layer in &a.attention {
            for m in layer {
                for i in 0..m.rows() {
                    assert!((m.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn prediction_contract() {
        let (scene, qa) = generate_synthetic_scene(3, "office").unwrap();
        let vocab = AnswerVocabulary::from(vec!["only".to_string()]);
        let (store, model) = VqaModel::init(&VqaConfig::toy(), 1, 2).unwrap();
        let q = crate::clip::tokenize_question(&qa[0].question);
        let p = predict(&store, &model, &scene, &q, &vocab).unwrap();
        assert_eq!(p.answer, "only");
        let g = Graph::new(&store);
        let boxes = model.forward(&ForwardCtx::eval(&g), &scene, &q).unwrap().proposals.boxes();
        assert_eq!(boxes[p.proposal_index], p.predicted_box);
        assert_eq!(p.class_probs.len(), NUM_CLASSES);
    }

    #[test]
    fn ranking_breaks_ties_low() {
        assert_eq!(ranking(&[1.0, 3.0, 3.0, 0.0]), [1, 2, 0, 3]);
        let scaled: Vec<f64> = [0.2, -1.0, 0.7].iter().map(|x| x * 4.5).collect();
        assert_eq!(ranking(&scaled)[0], ranking(&[0.2, -1.0, 0.7])[0]);
    }

    #[test]
    fn modes_differ_only_in_scene_weights() {
        let cfg = VqaConfig::toy();
        let (pre_store, _) = SceneModel::init(&cfg.model, 99).unwrap();
        let ckpt = Checkpoint {
            kind: CheckpointKind::Pretrain,
            config: serde_json::Value::Null,
            step: 0,
            rng: RngState { seed: 99, position: 0 },
            vocab: None,
            params: pre_store,
        };
        let (a, _) = initial_model(SceneInit::Pretrained(&ckpt), &cfg, 4, 5).unwrap();
        let (b, _) = initial_model(SceneInit::Scratch, &cfg, 4, 5).unwrap();
        let mut differing = 0;
        for (name, m) in a.iter() {
            let other = b.value(b.id(name).unwrap());
            if SCENE_NAMESPACES.iter().any(|p| name.starts_with(p)) {
                assert_eq!(m, ckpt.params.value(ckpt.params.id(name).unwrap()), "{name}");
                differing += usize::from(m != other);
            } else {
                assert_eq!(m, other, "{name}");
            }
        }
        assert!(differing > 0);
    }

    #[test]
    fn prediction_file_round_trip() {
        let r = PredictionRecord {
            scene_id: "s".into(),
            question_id: "q".into(),
            answer_top1: "red".into(),
            answer_top10: vec!["red".into(), "blue".into()],
            bbox: BoxRecord { center: [0.1, 0.2, 0.3], size: [1.0, 2.0, 0.5] },
            class_probs: vec![1.0 / 18.0; 18],
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pred.jsonl");
        write_predictions(&p, &[r.clone(), r.clone()]).unwrap();
        assert_eq!(read_predictions(&p).unwrap(), vec![r.clone(), r]);
    }
}
