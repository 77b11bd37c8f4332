//! The pre-trainable scene model: detector followed by the scene encoder.

use serde::{Deserialize, Serialize};

use crate::detector::{Detector, DetectorConfig, ProposalSet};
use crate::error::Result;
use crate::geometry::PointCloud;
use crate::nn::{ForwardCtx, Init, ParamStore};
use crate::rng;
use crate::scene_encoder::{EncodedScene, EncoderConfig, SceneEncoder};

/// Parameter name prefixes owned by the scene model.
pub const SCENE_NAMESPACES: [&str; 2] = ["detector.", "scene_encoder."];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub detector: DetectorConfig,
    pub encoder: EncoderConfig,
    /// Dropout rate inside transformer layers during training.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { detector: DetectorConfig::default(), encoder: EncoderConfig::default(), dropout: 0.1 }
    }
}

impl ModelConfig {
    pub fn toy() -> Self {
        ModelConfig { detector: DetectorConfig::toy(), encoder: EncoderConfig::toy(), dropout: 0.0 }
    }
}

#[derive(Clone, Debug)]
pub struct SceneModel {
    pub cfg: ModelConfig,
    pub detector: Detector,
    pub encoder: SceneEncoder,
}

pub struct SceneOutput<'g, 'p> {
    pub proposals: ProposalSet<'g, 'p>,
    pub encoded: EncodedScene<'g, 'p>,
}

impl SceneModel {
    pub fn build(init: &mut Init<'_>, cfg: &ModelConfig) -> Result<Self> {
        cfg.detector.validate()?;
        if cfg.encoder.heads == 0 || !cfg.detector.hidden.is_multiple_of(cfg.encoder.heads) {
            return Err(crate::Error::Config(format!(
                "hidden width {} is not divisible by {} heads",
                cfg.detector.hidden, cfg.encoder.heads
            )));
        }
        let detector = Detector::new(init, &cfg.detector);
        let encoder = SceneEncoder::new(init, cfg.detector.hidden, &cfg.encoder);
        Ok(SceneModel { cfg: cfg.clone(), detector, encoder })
    }

    /// Fresh parameters drawn from the `seed` initialization stream.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<(ParamStore, Self)> {
        let mut store = ParamStore::new();
        let mut r = rng::stream(seed, &[rng::tag::INIT]);
        let model = SceneModel::build(&mut Init { store: &mut store, rng: &mut r }, cfg)?;
        Ok((store, model))
    }

    pub fn forward<'g, 'p>(&self, ctx: &ForwardCtx<'g, 'p>, cloud: &PointCloud) -> Result<SceneOutput<'g, 'p>> {
        let proposals = self.detector.forward(ctx, cloud)?;
        let encoded = self.encoder.encode(ctx, proposals.features);
        Ok(SceneOutput { proposals, encoded })
    }
}
