//! Procedural rooms with templated questions.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::Rng;

use super::classes::{class_name, class_shape, plural, scene_type_classes, COLORS, NUMBER_WORDS};
use super::{LabeledBox, QARecord, SceneRecord};
use crate::error::{Error, Result};
use crate::geometry::{dist2, AxisAlignedBox, PointCloud};
use crate::rng;
use crate::tensor::Matrix;

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticConfig {
    pub points: usize,
    /// Room extent along x, y and z in meters; the floor sits at z = 0.
    pub room: [f64; 3],
    /// Share of points sampled inside objects; the rest are uniform clutter.
    pub object_fraction: f64,
    pub min_objects: usize,
    pub max_objects: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            points: 512,
            room: [4.0, 4.0, 2.5],
            object_fraction: 0.8,
            min_objects: 3,
            max_objects: 8,
        }
    }
}

pub fn generate_synthetic_scene(seed: u64, scene_type: &str) -> Result<(SceneRecord, Vec<QARecord>)> {
    generate_synthetic_scene_with(seed, scene_type, &SyntheticConfig::default())
}

pub fn generate_synthetic_scene_with(
    seed: u64,
    scene_type: &str,
    cfg: &SyntheticConfig,
) -> Result<(SceneRecord, Vec<QARecord>)> {
    let allowed = scene_type_classes(scene_type)?;
    if cfg.min_objects == 0 || cfg.min_objects > cfg.max_objects {
        return Err(Error::Config("object count range is empty".into()));
    }
    let mut rng = rng::stream_from_bytes(b"synthetic-scene", format!("{scene_type}/{seed}").as_bytes());
    let scene_id = format!("{scene_type}_{seed:04}");
    let target = rng.random_range(cfg.min_objects..=cfg.max_objects);
    let [w, d, h] = cfg.room;

    let mut objects: Vec<LabeledBox> = Vec::with_capacity(target);
    let mut colors: Vec<usize> = Vec::with_capacity(target);
    let mut failures = 0;
    while objects.len() < target && failures < 400 {
        let class_id = allowed[rng.random_range(0..allowed.len())];
        let shape = class_shape(class_id);
        let size = shape.size.map(|s| s * rng.random_range(0.85..1.15));
        let placed = (0..50).find_map(|_| {
            let cx = rng.random_range(size[0] / 2.0..w - size[0] / 2.0);
            let cy = rng.random_range(size[1] / 2.0..d - size[1] / 2.0);
            let overlaps = objects.iter().any(|o| {
                (o.bbox.center[0] - cx).abs() < 0.5 * (o.bbox.size[0] + size[0]) + 0.05
                    && (o.bbox.center[1] - cy).abs() < 0.5 * (o.bbox.size[1] + size[1]) + 0.05
            });
            (!overlaps).then_some([cx, cy, (shape.base_z + size[2] / 2.0).min(h - size[2] / 2.0)])
        });
        match placed {
            Some(center) => {
                objects.push(LabeledBox { bbox: AxisAlignedBox::new(center, size)?, class_id });
                colors.push(rng.random_range(0..COLORS.len()));
            }
            None => failures += 1,
        }
    }
    if objects.len() < cfg.min_objects {
        return Err(Error::Config(format!("could not place {} objects in the room", cfg.min_objects)));
    }

    let n_total = cfg.points.max(objects.len());
    let n_obj = ((n_total as f64 * cfg.object_fraction).round() as usize).clamp(objects.len(), n_total);
    let mut points = Vec::with_capacity(n_total);
    let mut rgb = Vec::with_capacity(n_total);
    for (i, (o, &c)) in objects.iter().zip(&colors).enumerate() {
        let share = n_obj / objects.len() + usize::from(i < n_obj % objects.len());
        let lo = o.bbox.min();
        let base = COLORS[c].1;
        for _ in 0..share {
            points.push([0, 1, 2].map(|a| lo[a] + rng.random::<f64>() * o.bbox.size[a]));
            rgb.push(base.map(|v| (v + rng.random_range(-0.05..0.05)).clamp(0.0, 1.0)));
        }
    }
    for _ in n_obj..n_total {
        points.push([rng.random::<f64>() * w, rng.random::<f64>() * d, rng.random::<f64>() * h]);
        let g = rng.random_range(0.4..0.6);
        rgb.push([g, g, g]);
    }
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut rng);
    let points: Vec<_> = order.iter().map(|&i| points[i]).collect();
    let rgb: Vec<_> = order.iter().map(|&i| rgb[i]).collect();
    let cloud = PointCloud::new(points, Some(Matrix::from_rows(&rgb)))?;

    let color_names: Vec<String> = colors.iter().map(|&c| COLORS[c].0.to_string()).collect();
    let description = describe(scene_type, &objects, &color_names);
    let scene = SceneRecord {
        scene_id: scene_id.clone(),
        scene_type: scene_type.to_string(),
        cloud,
        objects,
        description,
        object_colors: color_names,
    };
    let qa = template_questions(&scene);
    Ok((scene, qa))
}

/// `count` scenes cycling through `types`; scene `i` uses generator seed
/// `seed·100000 + i`, so ids stay readable for small seeds.
pub fn synthetic_corpus(count: usize, types: &[&str], seed: u64) -> Result<(Vec<SceneRecord>, Vec<QARecord>)> {
    if count == 0 || types.is_empty() {
        return Err(Error::Empty("synthetic corpus needs a count and at least one scene type"));
    }
    let mut scenes = Vec::with_capacity(count);
    let mut qa = Vec::new();
    for i in 0..count {
        let (s, q) = generate_synthetic_scene(seed.wrapping_mul(100_000).wrapping_add(i as u64), types[i % types.len()])?;
        scenes.push(s);
        qa.extend(q);
    }
    Ok((scenes, qa))
}

fn describe(scene_type: &str, objects: &[LabeledBox], colors: &[String]) -> String {
    let phrases: Vec<String> = objects
        .iter()
        .zip(colors)
        .map(|(o, c)| format!("a {c} {}", class_name(o.class_id)))
        .collect();
    let list = match phrases.split_last() {
        Some((last, rest)) if !rest.is_empty() => format!("{} and {last}", rest.join(", ")),
        Some((last, _)) => last.clone(),
        None => String::new(),
    };
    format!("a {scene_type} with {list}")
}

fn template_questions(scene: &SceneRecord) -> Vec<QARecord> {
    let mut seen = Vec::new();
    for o in &scene.objects {
        if !seen.contains(&o.class_id) {
            seen.push(o.class_id);
        }
    }
    let mut out = Vec::new();
    let mut push = |question: String, answers: Vec<String>, ids: Vec<usize>| {
        let gt_boxes: Vec<LabeledBox> = ids.iter().map(|&i| scene.objects[i]).collect();
        out.push(QARecord {
            scene_id: scene.scene_id.clone(),
            question_id: String::new(),
            question,
            answers,
            related_classes: gt_boxes.iter().map(|b| b.class_id).collect::<BTreeSet<_>>(),
            object_ids: ids,
            gt_boxes,
        });
    };
    for &c in &seen {
        let name = class_name(c);
        let ids: Vec<usize> = (0..scene.objects.len()).filter(|&i| scene.objects[i].class_id == c).collect();
        let n = ids.len();
        push(
            format!("how many {} are there?", plural(name)),
            vec![NUMBER_WORDS[n.min(8)].to_string(), n.to_string()],
            ids.clone(),
        );
        if n == 1 {
            let i = ids[0];
            push(format!("what color is the {name}?"), vec![scene.object_colors[i].clone()], vec![i]);
            let nearest = (0..scene.objects.len()).filter(|&j| j != i).min_by(|&a, &b| {
                let ca = scene.objects[i].bbox.center;
                dist2(ca, scene.objects[a].bbox.center).total_cmp(&dist2(ca, scene.objects[b].bbox.center))
            });
            let answer = match nearest {
                Some(j) => format!("next to the {}", class_name(scene.objects[j].class_id)),
                None => "in the middle of the room".to_string(),
            };
            push(format!("where is the {name}?"), vec![answer], vec![i]);
        }
    }
    for (i, q) in out.iter_mut().enumerate() {
        q.question_id = format!("{}_q{i}", scene.scene_id);
    }
    out
}
