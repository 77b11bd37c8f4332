//! Scenes, question-answer records, the answer vocabulary, dataset IO,
//! the synthetic scene generator and training-time augmentation.

mod augment;
pub mod classes;
mod io;
mod synthetic;

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

pub use augment::{augment, augment_with_transform, AugmentConfig, RigidTransform};
pub use classes::{class_id, class_name, CLASS_NAMES, NUM_CLASSES};
pub use io::{
    load_dataset, load_qa_dataset, read_qa_index, scene_to_json, write_qa_index, write_scene, Dataset,
};
pub use synthetic::{generate_synthetic_scene, generate_synthetic_scene_with, synthetic_corpus, SyntheticConfig};

use crate::error::{Error, Result};
use crate::geometry::{AxisAlignedBox, PointCloud};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledBox {
    #[serde(flatten)]
    pub bbox: AxisAlignedBox,
    pub class_id: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneRecord {
    pub scene_id: String,
    pub scene_type: String,
    pub cloud: PointCloud,
    pub objects: Vec<LabeledBox>,
    pub description: String,
    /// Colour name per object when known (synthetic scenes); may be empty.
    pub object_colors: Vec<String>,
}

impl SceneRecord {
    /// Checks that every object lies within the cloud's bounds grown by 0.5 m.
    pub fn validate(&self) -> std::result::Result<(), String> {
        let (lo, hi) = self.cloud.bounds();
        for (i, o) in self.objects.iter().enumerate() {
            let (bl, bh) = (o.bbox.min(), o.bbox.max());
            for a in 0..3 {
                if bl[a] < lo[a] - 0.5 || bh[a] > hi[a] + 0.5 {
                    return Err(format!("object {i} lies outside the point cloud region"));
                }
            }
            if o.class_id >= NUM_CLASSES {
                return Err(format!("object {i} has class id {}", o.class_id));
            }
        }
        Ok(())
    }

    /// Canonical textual layout used as the stand-in for a top-down render:
    /// the scene type followed by colour, class and a 3×3 map cell for every
    /// object.
    pub fn layout_string(&self) -> String {
        let (lo, hi) = self.cloud.bounds();
        let mut parts = Vec::with_capacity(self.objects.len());
        for (i, o) in self.objects.iter().enumerate() {
            let rel = |a: usize| (o.bbox.center[a] - lo[a]) / (hi[a] - lo[a]).max(1e-6);
            let cell = |v: f64| (v * 3.0).floor().clamp(0.0, 2.0) as usize;
            let region = [
                ["southwest", "south", "southeast"],
                ["west", "center", "east"],
                ["northwest", "north", "northeast"],
            ][cell(rel(1))][cell(rel(0))];
            let color = self.object_colors.get(i).map_or("grey", String::as_str);
            parts.push(format!("{color} {} {region}", class_name(o.class_id)));
        }
        format!("{}: {}", self.scene_type, parts.join(", "))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QARecord {
    pub scene_id: String,
    pub question_id: String,
    pub question: String,
    pub answers: Vec<String>,
    /// Indices of the referred objects within the scene's object list.
    pub object_ids: Vec<usize>,
    pub gt_boxes: Vec<LabeledBox>,
    pub related_classes: BTreeSet<usize>,
}

impl QARecord {
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.answers.is_empty() {
            return Err("answers list is empty".into());
        }
        if self.question.trim().is_empty() {
            return Err("question is empty".into());
        }
        for b in &self.gt_boxes {
            if !self.related_classes.contains(&b.class_id) {
                return Err(format!("box class {} missing from related classes", b.class_id));
            }
        }
        Ok(())
    }

    /// Class of the first referred object, the target of the object
    /// classification head.
    pub fn referred_class(&self) -> Option<usize> {
        self.gt_boxes.first().map(|b| b.class_id)
    }
}

/// Lexicographically sorted set of distinct answer strings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct AnswerVocabulary {
    answers: Vec<String>,
    index: HashMap<String, usize>,
}

impl From<Vec<String>> for AnswerVocabulary {
    fn from(mut answers: Vec<String>) -> Self {
        answers.sort();
        answers.dedup();
        let index = answers.iter().enumerate().map(|(i, a)| (a.clone(), i)).collect();
        AnswerVocabulary { answers, index }
    }
}

impl From<AnswerVocabulary> for Vec<String> {
    fn from(v: AnswerVocabulary) -> Self {
        v.answers
    }
}

impl AnswerVocabulary {
    pub fn len(&self) -> usize {
        self.answers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.answers.is_empty()
    }

    pub fn get(&self, i: usize) -> &str {
        &self.answers[i]
    }

    pub fn index_of(&self, answer: &str) -> Option<usize> {
        self.index.get(answer).copied()
    }

    pub fn answers(&self) -> &[String] {
        &self.answers
    }

    /// Indices of the record's answers that are in the vocabulary.
    pub fn encode(&self, answers: &[String]) -> Vec<usize> {
        let mut idx: Vec<usize> = answers.iter().filter_map(|a| self.index_of(a)).collect();
        idx.sort_unstable();
        idx.dedup();
        idx
    }
}

/// Every distinct answer of the training records, sorted.
pub fn build_answer_vocab(records: &[QARecord]) -> Result<AnswerVocabulary> {
    if records.is_empty() {
        return Err(Error::Empty("answer vocabulary needs at least one record"));
    }
    let all: Vec<String> = records.iter().flat_map(|r| r.answers.iter().cloned()).collect();
    Ok(AnswerVocabulary::from(all))
}

/// Seeded split into `(train, held_out)`, each in input order.
pub fn split_qa(records: &[QARecord], held_out: usize, seed: u64) -> Result<(Vec<QARecord>, Vec<QARecord>)> {
    use rand::seq::SliceRandom;
    if held_out >= records.len() {
        return Err(Error::Config(format!("cannot hold out {held_out} of {} records", records.len())));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut crate::rng::stream(seed, &[crate::rng::tag::SPLIT]));
    let mut test: Vec<usize> = order[..held_out].to_vec();
    test.sort_unstable();
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for (i, r) in records.iter().enumerate() {
        if test.binary_search(&i).is_ok() { b.push(r.clone()) } else { a.push(r.clone()) }
    }
    Ok((a, b))
}
