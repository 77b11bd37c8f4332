//! JSON dataset format.
//!
//! A scene file holds one object:
//!
//! ```json
//! {"scene_id": "...", "scene_type": "...", "description": "...",
//!  "points": [[x, y, z], ...], "colors": [[r, g, b], ...],
//!  "objects": [{"center": [..], "size": [..], "class": "chair", "color": "red"}],
//!  "qa": [{"question_id": "...", "question": "...", "answers": [..], "object_ids": [..]}]}
//! ```
//!
//! `colors` and the per-object `color` are optional. A dataset is either a
//! directory of scene files (read in file-name order), a single scene file,
//! or a file holding a JSON array of scenes. The flat question index
//! (`qa.json`) lists every question with its referred boxes inline.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::classes::{class_id, class_name};
use super::{LabeledBox, QARecord, SceneRecord};
use crate::error::{Error, Result};
use crate::geometry::{AxisAlignedBox, PointCloud};
use crate::tensor::Matrix;

#[derive(Serialize, Deserialize)]
struct RawObject {
    center: [f64; 3],
    size: [f64; 3],
    class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    color: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RawQa {
    #[serde(default)]
    question_id: Option<String>,
    question: String,
    answers: Vec<String>,
    #[serde(default)]
    object_ids: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct RawScene {
    scene_id: String,
    #[serde(default)]
    scene_type: String,
    #[serde(default)]
    description: String,
    points: Vec<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    colors: Option<Vec<[f64; 3]>>,
    objects: Vec<RawObject>,
    #[serde(default)]
    qa: Vec<RawQa>,
}

#[derive(Serialize, Deserialize)]
struct RawQaEntry {
    scene_id: String,
    question_id: String,
    question: String,
    answers: Vec<String>,
    object_ids: Vec<usize>,
    boxes: Vec<RawObject>,
}

/// Scenes together with all of their questions.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub scenes: Vec<SceneRecord>,
    pub qa: Vec<QARecord>,
}

impl Dataset {
    pub fn scene(&self, scene_id: &str) -> Option<&SceneRecord> {
        self.scenes.iter().find(|s| s.scene_id == scene_id)
    }

    pub fn scene_index(&self, scene_id: &str) -> Option<usize> {
        self.scenes.iter().position(|s| s.scene_id == scene_id)
    }
}

fn labeled_box(o: &RawObject) -> std::result::Result<LabeledBox, String> {
    let cid = class_id(&o.class).map_err(|e| e.to_string())?;
    let bbox = AxisAlignedBox::new(o.center, o.size).map_err(|e| e.to_string())?;
    Ok(LabeledBox { bbox, class_id: cid })
}

fn raw_object(b: &LabeledBox, color: Option<&String>) -> RawObject {
    RawObject {
        center: b.bbox.center,
        size: b.bbox.size,
        class: class_name(b.class_id).to_string(),
        color: color.cloned(),
    }
}

fn convert_scene(raw: RawScene, scene_index: usize, qa_offset: usize) -> Result<(SceneRecord, Vec<QARecord>)> {
    let bad = |message: String| Error::Record { index: scene_index, message: format!("scene {}: {message}", raw.scene_id) };
    let extra = raw.colors.as_ref().map(|c| Matrix::from_rows(c));
    let cloud = PointCloud::new(raw.points.clone(), extra).map_err(|e| bad(e.to_string()))?;
    let mut objects = Vec::with_capacity(raw.objects.len());
    for (i, o) in raw.objects.iter().enumerate() {
        objects.push(labeled_box(o).map_err(|m| bad(format!("object {i}: {m}")))?);
    }
    let object_colors: Vec<String> = if raw.objects.iter().all(|o| o.color.is_some()) {
        raw.objects.iter().filter_map(|o| o.color.clone()).collect()
    } else {
        Vec::new()
    };
    let scene = SceneRecord {
        scene_id: raw.scene_id.clone(),
        scene_type: raw.scene_type.clone(),
        cloud,
        objects,
        description: raw.description.clone(),
        object_colors,
    };
    scene.validate().map_err(bad)?;

    let mut qas = Vec::with_capacity(raw.qa.len());
    for (qi, q) in raw.qa.into_iter().enumerate() {
        let index = qa_offset + qi;
        let mut gt_boxes = Vec::with_capacity(q.object_ids.len());
        for &oid in &q.object_ids {
            let b = scene.objects.get(oid).ok_or_else(|| Error::Record {
                index,
                message: format!("object id {oid} out of range for scene {}", scene.scene_id),
            })?;
            gt_boxes.push(*b);
        }
        let rec = QARecord {
            scene_id: scene.scene_id.clone(),
            question_id: q.question_id.unwrap_or_else(|| format!("{}_q{qi}", scene.scene_id)),
            question: q.question,
            answers: q.answers,
            related_classes: gt_boxes.iter().map(|b| b.class_id).collect::<BTreeSet<_>>(),
            object_ids: q.object_ids,
            gt_boxes,
        };
        rec.validate().map_err(|message| Error::Record { index, message })?;
        qas.push(rec);
    }
    Ok((scene, qas))
}

fn read_json(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::json(path, e))
}

fn scene_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let dir = if dir.join("scenes").is_dir() { dir.join("scenes") } else { dir.to_path_buf() };
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json") && p.file_name() != Some("qa.json".as_ref()))
        .collect();
    files.sort();
    Ok(files)
}

fn append_scene(ds: &mut Dataset, value: Value) -> Result<()> {
    let index = ds.scenes.len();
    let raw: RawScene = serde_json::from_value(value).map_err(|e| Error::Record {
        index,
        message: format!("scene: {e}"),
    })?;
    let (scene, qas) = convert_scene(raw, index, ds.qa.len())?;
    if ds.scene(&scene.scene_id).is_some() {
        return Err(Error::Record { index, message: format!("duplicate scene id {}", scene.scene_id) });
    }
    ds.scenes.push(scene);
    ds.qa.extend(qas);
    Ok(())
}

/// Loads scenes and their questions from a directory or a JSON file.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mut ds = Dataset::default();
    if path.is_dir() {
        for f in scene_files(path)? {
            append_scene(&mut ds, read_json(&f)?)?;
        }
    } else {
        match read_json(path)? {
            Value::Array(items) => {
                for item in items {
                    append_scene(&mut ds, item)?;
                }
            }
            v => append_scene(&mut ds, v)?,
        }
    }
    if ds.scenes.is_empty() {
        return Err(Error::Empty("dataset holds no scenes"));
    }
    Ok(ds)
}

/// Loads question records from a dataset (see [`load_dataset`]) or from a
/// flat question index.
pub fn load_qa_dataset(path: impl AsRef<Path>) -> Result<Vec<QARecord>> {
    let path = path.as_ref();
    if path.is_file() {
        if let Value::Array(items) = read_json(path)? {
            if items.first().is_some_and(|v| v.get("question").is_some()) {
                return parse_qa_index(items);
            }
        }
    }
    Ok(load_dataset(path)?.qa)
}

fn parse_qa_index(items: Vec<Value>) -> Result<Vec<QARecord>> {
    let mut out = Vec::with_capacity(items.len());
    for (index, item) in items.into_iter().enumerate() {
        let raw: RawQaEntry = serde_json::from_value(item).map_err(|e| Error::Record { index, message: e.to_string() })?;
        let mut gt_boxes = Vec::with_capacity(raw.boxes.len());
        for o in &raw.boxes {
            gt_boxes.push(labeled_box(o).map_err(|message| Error::Record { index, message })?);
        }
        if gt_boxes.len() != raw.object_ids.len() {
            return Err(Error::Record { index, message: "object_ids and boxes differ in length".into() });
        }
        let rec = QARecord {
            scene_id: raw.scene_id,
            question_id: raw.question_id,
            question: raw.question,
            answers: raw.answers,
            related_classes: gt_boxes.iter().map(|b| b.class_id).collect(),
            object_ids: raw.object_ids,
            gt_boxes,
        };
        rec.validate().map_err(|message| Error::Record { index, message })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn read_qa_index(path: impl AsRef<Path>) -> Result<Vec<QARecord>> {
    match read_json(path.as_ref())? {
        Value::Array(items) => parse_qa_index(items),
        _ => Err(Error::Record { index: 0, message: "question index must be a JSON array".into() }),
    }
}

pub fn write_qa_index(path: impl AsRef<Path>, records: &[QARecord]) -> Result<()> {
    let entries: Vec<RawQaEntry> = records
        .iter()
        .map(|r| RawQaEntry {
            scene_id: r.scene_id.clone(),
            question_id: r.question_id.clone(),
            question: r.question.clone(),
            answers: r.answers.clone(),
            object_ids: r.object_ids.clone(),
            boxes: r.gt_boxes.iter().map(|b| raw_object(b, None)).collect(),
        })
        .collect();
    let text = serde_json::to_string(&entries).expect("serializable");
    fs::write(path.as_ref(), text).map_err(|e| Error::io(path.as_ref(), e))
}

/// Compact JSON for one scene and the questions that belong to it.
pub fn scene_to_json(scene: &SceneRecord, qas: &[QARecord]) -> String {
    let colors = scene.cloud.extra().filter(|e| e.cols() == 3).map(|e| {
        (0..e.rows()).map(|r| [e.get(r, 0), e.get(r, 1), e.get(r, 2)]).collect()
    });
    let raw = RawScene {
        scene_id: scene.scene_id.clone(),
        scene_type: scene.scene_type.clone(),
        description: scene.description.clone(),
        points: scene.cloud.points().to_vec(),
        colors,
        objects: scene
            .objects
            .iter()
            .enumerate()
            .map(|(i, b)| raw_object(b, scene.object_colors.get(i)))
            .collect(),
        qa: qas
            .iter()
            .filter(|q| q.scene_id == scene.scene_id)
            .map(|q| RawQa {
                question_id: Some(q.question_id.clone()),
                question: q.question.clone(),
                answers: q.answers.clone(),
                object_ids: q.object_ids.clone(),
            })
            .collect(),
    };
    serde_json::to_string(&raw).expect("serializable")
}

pub fn write_scene(path: impl AsRef<Path>, scene: &SceneRecord, qas: &[QARecord]) -> Result<()> {
    fs::write(path.as_ref(), scene_to_json(scene, qas)).map_err(|e| Error::io(path.as_ref(), e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const TWO_QA: &str = r#"{"scene_id":"s0","scene_type":"office","description":"d",
        "points":[[0,0,0],[1,1,1],[2,2,2]],
        "objects":[{"center":[1,1,1],"size":[1,1,1],"class":"chair"}],
        "qa":[{"question":"what is this?","answers":["chair"],"object_ids":[0]},
              {"question":"how many chairs are there?","answers":["one","1"],"object_ids":[0]}]}"#;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn parses_well_formed_scene() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "s0.json", TWO_QA);
        let qa = load_qa_dataset(&p).unwrap();
        assert_eq!(qa.len(), 2);
        assert_eq!(qa[1].answers, ["one", "1"]);
        assert_eq!(qa[0].gt_boxes[0].class_id, class_id("chair").unwrap());
        assert_eq!(qa[0].question_id, "s0_q0");
    }

    #[test]
    fn empty_answers_rejected_with_index() {
        let dir = tempfile::tempdir().unwrap();
        let text = TWO_QA.replace(r#"["one","1"]"#, "[]");
        let p = write(dir.path(), "s0.json", &text);
        match load_qa_dataset(&p) {
            Err(Error::Record { index, message }) => {
                assert_eq!(index, 1);
                assert!(message.contains("empty"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_class_and_missing_field_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.json", &TWO_QA.replace("\"chair\"}", "\"lamp\"}"));
        let err = load_qa_dataset(&p).unwrap_err().to_string();
        assert!(err.contains("lamp"), "{err}");
        let p = write(dir.path(), "b.json", &TWO_QA.replace(r#""points""#, r#""pts""#));
        let err = load_qa_dataset(&p).unwrap_err().to_string();
        assert!(err.contains("points"), "{err}");
        let p = write(dir.path(), "c.json", "{not json");
        assert!(matches!(load_qa_dataset(&p), Err(Error::Json { .. })));
    }

    #[test]
    fn writer_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "s0.json", TWO_QA);
        let ds = load_dataset(&p).unwrap();
        let out = dir.path().join("out.json");
        write_scene(&out, &ds.scenes[0], &ds.qa).unwrap();
        assert_eq!(load_dataset(&out).unwrap(), ds);
        let idx = dir.path().join("qa_index.json");
        write_qa_index(&idx, &ds.qa).unwrap();
        assert_eq!(read_qa_index(&idx).unwrap(), ds.qa);
        assert_eq!(load_qa_dataset(&idx).unwrap(), ds.qa);
    }
}
