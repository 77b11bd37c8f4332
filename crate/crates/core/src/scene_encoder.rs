//! Relation modeling over proposals: one position-free transformer layer on
//! `[CLS; proposals]`, whose CLS output is the scene embedding.

use serde::{Deserialize, Serialize};

use crate::autograd::Var;
use crate::clip::EMBED_DIM;
use crate::nn::{EncoderLayer, ForwardCtx, Init, Linear, ParamId};
use crate::tensor::Matrix;

/// Standard deviation of the CLS token initialization.
pub const CLS_INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub heads: usize,
    pub ff_dim: usize,
    /// Width of the alignment target space.
    pub align_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig { heads: 4, ff_dim: 128, align_dim: EMBED_DIM }
    }
}

impl EncoderConfig {
    pub fn toy() -> Self {
        EncoderConfig { heads: 2, ff_dim: 32, align_dim: EMBED_DIM }
    }
}

/// `z_scene` (`1×h`) and its projection `z_aligned = z_scene·P` (`1×512`).
pub struct SceneEmbedding<'g, 'p> {
    pub z_scene: Var<'g, 'p>,
    pub z_aligned: Var<'g, 'p>,
}

pub struct EncodedScene<'g, 'p> {
    /// Updated proposal features, `k×h`, in input order.
    pub objects: Var<'g, 'p>,
    pub embedding: SceneEmbedding<'g, 'p>,
    /// Per-head `(k+1)×(k+1)` attention; row/column 0 is the CLS token.
    pub attention: Vec<Matrix>,
}

#[derive(Clone, Debug)]
pub struct SceneEncoder {
    pub cls: ParamId,
    pub layer: EncoderLayer,
    pub align: Linear,
}

impl SceneEncoder {
    pub fn new(init: &mut Init<'_>, hidden: usize, cfg: &EncoderConfig) -> Self {
        SceneEncoder {
            cls: init.normal("scene_encoder.cls", 1, hidden, CLS_INIT_STD),
            layer: EncoderLayer::new(init, "scene_encoder.layer", hidden, cfg.heads, cfg.ff_dim),
            align: Linear::without_bias(init, "scene_encoder.align", hidden, cfg.align_dim),
        }
    }

    /// No positional encoding is added, so permuting the proposal rows
    /// permutes `objects` and leaves the embedding unchanged.
    pub fn encode<'g, 'p>(&self, ctx: &ForwardCtx<'g, 'p>, proposals: Var<'g, 'p>) -> EncodedScene<'g, 'p> {
        let k = proposals.shape().0;
        let tokens = Var::concat_rows(&[ctx.param(self.cls), proposals]);
        let (out, attention) = self.layer.forward(ctx, tokens);
        let z_scene = out.row(0);
        EncodedScene {
            objects: out.slice_rows(1, k),
            embedding: SceneEmbedding { z_scene, z_aligned: self.align.forward(ctx, z_scene) },
            attention,
        }
    }
}
