//! Training-time augmentation: small random rotation about all three axes,
//! random translation, and a random cuboid crop.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SceneRecord;
use crate::geometry::{add, apply_rotation, rotate_box, rotation_matrix, AxisAlignedBox, Point3};
use crate::rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub max_rot_deg: f64,
    pub max_trans_m: f64,
    /// Enables the cuboid crop, applied with probability [`AugmentConfig::CROP_PROBABILITY`].
    pub crop: bool,
    pub cuboid_min_fraction: f64,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            max_rot_deg: 5.0,
            max_trans_m: 0.5,
            crop: true,
            cuboid_min_fraction: 0.8,
            seed: 0,
        }
    }
}

impl AugmentConfig {
    pub const CROP_PROBABILITY: f64 = 0.5;
    pub const CROP_ATTEMPTS: usize = 10;

    pub fn identity() -> Self {
        AugmentConfig { max_rot_deg: 0.0, max_trans_m: 0.0, crop: false, ..Self::default() }
    }
}

const IDENTITY: [[f64; 3]; 3] = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

/// The rigid part of an augmentation, for carrying extra boxes along.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RigidTransform {
    pub rotation: [[f64; 3]; 3],
    pub translation: Point3,
}

impl RigidTransform {
    pub fn apply_point(&self, p: Point3) -> Point3 {
        add(apply_rotation(&self.rotation, p), self.translation)
    }

    /// Axis-aligned hull of the transformed box.
    pub fn apply_box(&self, b: &AxisAlignedBox) -> AxisAlignedBox {
        if self.rotation == IDENTITY {
            return b.translated(self.translation);
        }
        rotate_box(b, &self.rotation).translated(self.translation)
    }
}

pub fn augment(scene: &SceneRecord, cfg: &AugmentConfig) -> SceneRecord {
    augment_with_transform(scene, cfg).0
}

/// Rotation, then translation, then (maybe) a cuboid crop. Boxes follow the
/// rigid motion; boxes whose centers leave the crop are dropped.
pub fn augment_with_transform(scene: &SceneRecord, cfg: &AugmentConfig) -> (SceneRecord, RigidTransform) {
    let mut rng = rng::stream(cfg.seed, &[rng::tag::AUGMENT]);
    let mut sym = |max: f64| (2.0 * rng.random::<f64>() - 1.0) * max;
    let max_rot = cfg.max_rot_deg.max(0.0).to_radians();
    let angles = [sym(max_rot), sym(max_rot), sym(max_rot)];
    let max_t = cfg.max_trans_m.max(0.0);
    let translation = [sym(max_t), sym(max_t), sym(max_t)];
    let tf = RigidTransform { rotation: rotation_matrix(angles), translation };

    let moved: Vec<Point3> = scene.cloud.points().iter().map(|&p| tf.apply_point(p)).collect();
    let mut out = scene.clone();
    out.cloud = crate::geometry::PointCloud::new(moved, scene.cloud.extra().cloned()).expect("rigid motion keeps points finite");
    for o in &mut out.objects {
        o.bbox = tf.apply_box(&o.bbox);
    }

    if cfg.crop && rng.random::<f64>() < AugmentConfig::CROP_PROBABILITY {
        if let Some(region) = pick_crop(&out, cfg.cuboid_min_fraction, &mut rng) {
            let keep: Vec<usize> = (0..out.cloud.len()).filter(|&i| region.contains(out.cloud.points()[i])).collect();
            out.cloud = out.cloud.subset(&keep).expect("crop keeps at least one point");
            let mut objects = Vec::new();
            let mut colors = Vec::new();
            for (i, o) in out.objects.iter().enumerate() {
                if region.contains(o.bbox.center) {
                    objects.push(*o);
                    if let Some(c) = out.object_colors.get(i) {
                        colors.push(c.clone());
                    }
                }
            }
            out.objects = objects;
            out.object_colors = colors;
        }
    }
    (out, tf)
}

fn pick_crop(scene: &SceneRecord, min_fraction: f64, rng: &mut impl Rng) -> Option<AxisAlignedBox> {
    let n = scene.cloud.len();
    let need = ((min_fraction.clamp(0.0, 1.0) * n as f64).ceil() as usize).max(1);
    let (lo, hi) = scene.cloud.bounds();
    let side_lo = min_fraction.clamp(1e-3, 1.0).cbrt();
    for _ in 0..AugmentConfig::CROP_ATTEMPTS {
        let anchor = scene.cloud.points()[rng.random_range(0..n)];
        let size = [0, 1, 2].map(|a| {
            let f = if side_lo < 1.0 { rng.random_range(side_lo..=1.0) } else { 1.0 };
            ((hi[a] - lo[a]) * f).max(1e-6)
        });
        let region = AxisAlignedBox::new(anchor, size).ok()?;
        let kept = scene.cloud.points().iter().filter(|p| region.contains(**p)).count();
        if kept >= need {
            return Some(region);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic_scene;
    use crate::geometry::sub;
    use proptest::prelude::*;

    #[test]
    fn identity_config_is_identity() {
        let (scene, _) = generate_synthetic_scene(1, "office").unwrap();
        assert_eq!(augment(&scene, &AugmentConfig::identity()), scene);
    }

    #[test]
    fn translation_shifts_every_box_equally() {
        let (scene, _) = generate_synthetic_scene(2, "kitchen").unwrap();
        let cfg = AugmentConfig { max_rot_deg: 0.0, max_trans_m: 0.5, crop: false, seed: 9, ..Default::default() };
        let out = augment(&scene, &cfg);
        let shift = sub(out.objects[0].bbox.center, scene.objects[0].bbox.center);
        assert!(shift.iter().any(|s| s.abs() > 1e-6));
        for (a, b) in scene.objects.iter().zip(&out.objects) {
            let d = sub(b.bbox.center, a.bbox.center);
            for i in 0..3 {
                assert!((d[i] - shift[i]).abs() < 1e-12);
                assert!(shift[i].abs() <= 0.5);
            }
        }
    }

    #[test]
    fn crop_keeps_minimum_fraction() {
        let (scene, _) = generate_synthetic_scene(5, "bathroom").unwrap();
        let mut cropped = 0;
        for seed in 0..40 {
            let cfg = AugmentConfig { max_rot_deg: 0.0, max_trans_m: 0.0, crop: true, cuboid_min_fraction: 0.8, seed };
            let out = augment(&scene, &cfg);
            assert!(out.cloud.len() as f64 >= 0.8 * scene.cloud.len() as f64);
            if out.cloud.len() < scene.cloud.len() {
                cropped += 1;
                for o in &out.objects {
                    assert!(scene.objects.iter().any(|s| s.bbox == o.bbox));
                }
            }
        }
        assert!(cropped > 0, "crop never applied");
    }

    proptest! {
        #[test]
        fn rigid_augment_preserves_containment(seed in 0u64..500, u in prop::array::uniform3(0.0..1.0f64)) {
            let (scene, _) = generate_synthetic_scene(seed % 7, "office").unwrap();
            let cfg = AugmentConfig { crop: false, seed, ..Default::default() };
            let (out, tf) = augment_with_transform(&scene, &cfg);
            for (before, after) in scene.objects.iter().zip(&out.objects) {
                let lo = before.bbox.min();
                let p = [0, 1, 2].map(|a| lo[a] + u[a] * before.bbox.size[a]);
                let q = tf.apply_point(p);
                let grown = AxisAlignedBox::new(after.bbox.center, after.bbox.size.map(|s| s + 1e-9)).unwrap();
                prop_assert!(grown.contains(q));
            }
        }
    }
}
