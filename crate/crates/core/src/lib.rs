//! CLIP-guided pre-training of a 3D scene encoder and its transfer to
//! 3D visual question answering.
//!
//! The pipeline: a voting detector turns a point cloud into object
//! proposals ([`detector`]), a transformer with a learnable classification
//! token pools them into a scene embedding ([`scene_encoder`]) that is
//! aligned to frozen text and image embeddings ([`clip`], [`pretrain`]),
//! and the pre-trained encoder is then fine-tuned inside a question
//! answering model ([`vqa`]) scored by [`metrics`].

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod autograd;
pub mod checkpoint;
pub mod clip;
pub mod data;
pub mod detector;
pub mod error;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod pretrain;
pub mod projection;
pub mod rng;
pub mod scene_encoder;
pub mod tensor;
pub mod text;
pub mod vqa;

pub use error::{Error, Result};
pub use geometry::{iou, AxisAlignedBox, PointCloud};
pub use tensor::Matrix;
