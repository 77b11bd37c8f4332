//! Parameter storage, layers, and the adaptive-moment optimizer.

use std::cell::RefCell;
use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autograd::{Graph, Var};
use crate::tensor::Matrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

/// Named learned tensors, kept in insertion order.
///
/// Values are held on the `f32` grid so persisting them as `f32` is lossless.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, mut value: Matrix) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter name {name}");
        value.round_to_f32();
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    /// Replaces a value; it is snapped to the `f32` grid.
    pub fn set(&mut self, id: ParamId, mut value: Matrix) {
        assert_eq!(value.shape(), self.values[id.0].shape(), "shape of {}", self.names[id.0]);
        value.round_to_f32();
        self.values[id.0] = value;
    }

    /// Raw mutable access, used by finite-difference checks.
    pub fn value_mut_unrounded(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied().map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Matrix::len).sum()
    }

    /// Copies every parameter whose name starts with one of `prefixes` from
    /// `other`, checking that names and shapes line up.
    pub fn copy_namespaces(&mut self, other: &ParamStore, prefixes: &[&str]) -> Result<usize, String> {
        let mut copied = 0;
        for (name, value) in other.iter() {
            if !prefixes.iter().any(|p| name.starts_with(p)) {
                continue;
            }
            let id = self.id(name).ok_or_else(|| format!("parameter {name} not present in target model"))?;
            if self.value(id).shape() != value.shape() {
                return Err(format!(
                    "shape mismatch for {name}: checkpoint {:?}, model {:?}",
                    value.shape(),
                    self.value(id).shape()
                ));
            }
            self.values[id.0] = value.clone();
            copied += 1;
        }
        for name in &self.names {
            if prefixes.iter().any(|p| name.starts_with(p)) && other.id(name).is_none() {
                return Err(format!("parameter {name} missing from checkpoint"));
            }
        }
        Ok(copied)
    }
}

/// Seeded parameter initializer.
pub struct Init<'a> {
    pub store: &'a mut ParamStore,
    pub rng: &'a mut ChaCha8Rng,
}

impl Init<'_> {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`, the usual dense-layer default.
    pub fn uniform(&mut self, name: &str, rows: usize, cols: usize, fan_in: usize) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let data = (0..rows * cols).map(|_| self.rng.random_range(-bound..bound)).collect();
        self.store.add(name, Matrix::from_vec(rows, cols, data))
    }

    pub fn normal(&mut self, name: &str, rows: usize, cols: usize, std: f64) -> ParamId {
        let dist = Normal::new(0.0, std).expect("valid std");
        let data = (0..rows * cols).map(|_| dist.sample(self.rng)).collect();
        self.store.add(name, Matrix::from_vec(rows, cols, data))
    }

    pub fn constant(&mut self, name: &str, rows: usize, cols: usize, value: f64) -> ParamId {
        self.store.add(name, Matrix::filled(rows, cols, value))
    }
}

/// Per-pass settings: whether dropout is active and the stream it draws from.
pub struct ForwardCtx<'g, 'p> {
    pub graph: &'g Graph<'p>,
    dropout: Option<(f64, RefCell<ChaCha8Rng>)>,
}

impl<'g, 'p> ForwardCtx<'g, 'p> {
    pub fn eval(graph: &'g Graph<'p>) -> Self {
        ForwardCtx { graph, dropout: None }
    }

    pub fn train(graph: &'g Graph<'p>, dropout: f64, rng: ChaCha8Rng) -> Self {
        let dropout = (dropout > 0.0).then(|| (dropout, RefCell::new(rng)));
        ForwardCtx { graph, dropout }
    }

    pub fn param(&self, id: ParamId) -> Var<'g, 'p> {
        self.graph.param(id)
    }

    pub fn dropout(&self, x: Var<'g, 'p>) -> Var<'g, 'p> {
        let Some((p, rng)) = &self.dropout else { return x };
        let (r, c) = x.shape();
        let keep = 1.0 / (1.0 - p);
        let mut rng = rng.borrow_mut();
        let mask = (0..r * c)
            .map(|_| if rng.random::<f64>() < *p { 0.0 } else { keep })
            .collect();
        x.dropout_mask(Matrix::from_vec(r, c, mask))
    }
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(init: &mut Init<'_>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = init.uniform(&format!("{name}.weight"), in_dim, out_dim, in_dim);
        let bias = Some(init.uniform(&format!("{name}.bias"), 1, out_dim, in_dim));
        Linear { weight, bias, in_dim, out_dim }
    }

    pub fn without_bias(init: &mut Init<'_>, name: &str, in_dim: usize, out_dim: usize) -> Self {
        let weight = init.uniform(&format!("{name}.weight"), in_dim, out_dim, in_dim);
        Linear { weight, bias: None, in_dim, out_dim }
    }

    pub fn forward<'g, 'p>(&self, ctx: &ForwardCtx<'g, 'p>, x: Var<'g, 'p>) -> Var<'g, 'p> {
        let y = x.matmul(ctx.param(self.weight));
        match self.bias {
            Some(b) => y.add_row(ctx.param(b)),
            None => y,
        }
    }

    /// Zeroes weight and bias in `store`.
    pub fn zero(&self, store: &mut ParamStore) {
        store.set(self.weight, Matrix::zeros(self.in_dim, self.out_dim));
        if let Some(b) = self.bias {
            store.set(b, Matrix::zeros(1, self.out_dim));
        }
    }
}

/// Shared per-row stack of affine layers with ReLU after each.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub relu_last: bool,
}

impl Mlp {
    pub fn new(init: &mut Init<'_>, name: &str, in_dim: usize, widths: &[usize], relu_last: bool) -> Self {
        let mut layers = Vec::with_capacity(widths.len());
        let mut d = in_dim;
        for (i, &w) in widths.iter().enumerate() {
            layers.push(Linear::new(init, &format!("{name}.{i}"), d, w));
            d = w;
        }
        Mlp { layers, relu_last }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_dim)
    }

    pub fn forward<'g, 'p>(&self, ctx: &ForwardCtx<'g, 'p>, mut x: Var<'g, 'p>) -> Var<'g, 'p> {
        let n = self.layers.len();
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(ctx, x);
            if i + 1 < n || self.relu_last {
                x = x.relu();
            }
        }
        x
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub const EPS: f64 = 1e-5;

    pub fn new(init: &mut Init<'_>, name: &str, dim: usize) -> Self {
        LayerNorm {
            gamma: init.constant(&format!("{name}.gamma"), 1, dim, 1.0),
            beta: init.constant(&format!("{name}.beta"), 1, dim, 0.0),
        }
    }

    pub fn forward<'g, 'p>(&self, ctx: &ForwardCtx<'g, 'p>, x: Var<'g, 'p>) -> Var<'g, 'p> {
        x.layer_norm_rows(Self::EPS)
            .mul_row(ctx.param(self.gamma))
            .add_row(ctx.param(self.beta))
    }
}

#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    q: Linear,
    k: Linear,
    v: Linear,
    out: Linear,
    heads: usize,
    dim: usize,
}

impl MultiHeadAttention {
    pub fn new(init: &mut Init<'_>, name: &str, dim: usize, heads: usize) -> Self {
        assert!(heads > 0 && dim.is_multiple_of(heads), "width {dim} not divisible by {heads} heads");
        MultiHeadAttention {
            q: Linear::new(init, &format!("{name}.q"), dim, dim),
            k: Linear::new(init, &format!("{name}.k"), dim, dim),
            v: Linear::new(init, &format!("{name}.v"), dim, dim),
            out: Linear::new(init, &format!("{name}.out"), dim, dim),
            heads,
            dim,
        }
    }

    /// Full (unmasked) self-attention. Also returns each head's row-stochastic
    /// attention matrix.
    pub fn forward<'g, 'p>(&self, ctx: &ForwardCtx<'g, 'p>, x: Var<'g, 'p>) -> (Var<'g, 'p>, Vec<Matrix>) {
        let q = self.q.forward(ctx, x);
        let k = self.k.forward(ctx, x);
        let v = self.v.forward(ctx, x);
        let dh = self.dim / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(self.heads);
        let mut maps = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = q.slice_cols(h * dh, dh);
            let kh = k.slice_cols(h * dh, dh);
            let vh = v.slice_cols(h * dh, dh);
            let attn = qh.matmul(kh.transpose()).scale(scale).softmax_rows();
            maps.push((*attn.value()).clone());
            outs.push(ctx.dropout(attn).matmul(vh));
        }
        let cat = if outs.len() == 1 { outs[0] } else { Var::concat_cols(&outs) };
        (self.out.forward(ctx, cat), maps)
    }
}

/// Post-norm transformer encoder layer: attention and a ReLU feed-forward
/// block, each wrapped in a residual connection followed by layer norm.
#[derive(Clone, Debug)]
pub struct EncoderLayer {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ff: Mlp,
    norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn new(init: &mut Init<'_>, name: &str, dim: usize, heads: usize, ff_dim: usize) -> Self {
        EncoderLayer {
            attn: MultiHeadAttention::new(init, &format!("{name}.attn"), dim, heads),
            norm1: LayerNorm::new(init, &format!("{name}.norm1"), dim),
            ff: Mlp::new(init, &format!("{name}.ff"), dim, &[ff_dim, dim], false),
            norm2: LayerNorm::new(init, &format!("{name}.norm2"), dim),
        }
    }

    pub fn forward<'g, 'p>(&self, ctx: &ForwardCtx<'g, 'p>, x: Var<'g, 'p>) -> (Var<'g, 'p>, Vec<Matrix>) {
        let (a, maps) = self.attn.forward(ctx, x);
        let x = self.norm1.forward(ctx, x.add(ctx.dropout(a)));
        let f = self.ff.forward(ctx, x);
        let x = self.norm2.forward(ctx, x.add(ctx.dropout(f)));
        (x, maps)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Apply weight decay directly to the parameters instead of adding it
    /// to the gradient.
    pub decoupled: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            decoupled: false,
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: u64,
}

impl Adam {
    pub fn new(store: &ParamStore, cfg: AdamConfig) -> Self {
        let zeros: Vec<Matrix> = store
            .iter()
            .map(|(_, p)| Matrix::zeros(p.rows(), p.cols()))
            .collect();
        Adam { cfg, m: zeros.clone(), v: zeros, t: 0 }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &[Matrix], lr: f64) {
        assert_eq!(grads.len(), store.len());
        self.t += 1;
        let c = self.cfg;
        let bc1 = 1.0 - c.beta1.powi(self.t as i32);
        let bc2 = 1.0 - c.beta2.powi(self.t as i32);
        for (i, id) in store.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let mut p = store.value(id).clone();
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for j in 0..p.len() {
                let w = p.data()[j];
                let mut g = grads[i].data()[j];
                if !c.decoupled {
                    g += c.weight_decay * w;
                }
                let mj = c.beta1 * m.data()[j] + (1.0 - c.beta1) * g;
                let vj = c.beta2 * v.data()[j] + (1.0 - c.beta2) * g * g;
                m.data_mut()[j] = mj;
                v.data_mut()[j] = vj;
                let mut nw = w - lr * (mj / bc1) / ((vj / bc2).sqrt() + c.eps);
                if c.decoupled {
                    nw -= lr * c.weight_decay * w;
                }
                p.data_mut()[j] = nw;
            }
            store.set(id, p);
        }
    }
}

/// Adds `grads` into `sum`, scaled by `weight`.
pub fn accumulate(sum: &mut [Matrix], grads: &[Matrix], weight: f64) {
    for (s, g) in sum.iter_mut().zip(grads) {
        for (a, b) in s.data_mut().iter_mut().zip(g.data()) {
            *a += weight * b;
        }
    }
}

pub fn zero_grads(store: &ParamStore) -> Vec<Matrix> {
    store.iter().map(|(_, p)| Matrix::zeros(p.rows(), p.cols())).collect()
}

/// Sinusoidal position table, `len×dim`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Matrix {
    let mut pe = Matrix::zeros(len, dim);
    for pos in 0..len {
        for i in 0..dim {
            let rate = 1.0 / 10000f64.powf((2 * (i / 2)) as f64 / dim as f64);
            let angle = pos as f64 * rate;
            pe.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    pe
}
