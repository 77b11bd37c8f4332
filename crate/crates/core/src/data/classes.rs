//! The fixed 18-class object vocabulary and the synthetic scene-type registry.

use crate::error::{Error, Result};

pub const NUM_CLASSES: usize = 18;

/// ScanNet benchmark classes without wall and floor, in benchmark order.
pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "cabinet",
    "bed",
    "chair",
    "sofa",
    "table",
    "door",
    "window",
    "bookshelf",
    "picture",
    "counter",
    "desk",
    "curtain",
    "refrigerator",
    "shower curtain",
    "toilet",
    "sink",
    "bathtub",
    "otherfurniture",
];

pub fn class_id(name: &str) -> Result<usize> {
    CLASS_NAMES
        .iter()
        .position(|c| *c == name)
        .ok_or_else(|| Error::UnknownClass(name.to_string()))
}

pub fn class_name(id: usize) -> &'static str {
    CLASS_NAMES[id]
}

pub fn plural(name: &str) -> String {
    match name {
        "bookshelf" => "bookshelves".into(),
        "otherfurniture" => "other furniture".into(),
        n => format!("{n}s"),
    }
}

/// Nominal footprint/height in meters and the height of the object's base.
pub(crate) struct ClassShape {
    pub size: [f64; 3],
    pub base_z: f64,
}

pub(crate) fn class_shape(id: usize) -> ClassShape {
    let (size, base_z) = match CLASS_NAMES[id] {
        "cabinet" => ([0.6, 0.5, 0.9], 0.0),
        "bed" => ([2.0, 1.6, 0.6], 0.0),
        "chair" => ([0.5, 0.5, 0.9], 0.0),
        "sofa" => ([1.8, 0.9, 0.8], 0.0),
        "table" => ([1.2, 0.8, 0.75], 0.0),
        "door" => ([0.9, 0.15, 2.0], 0.0),
        "window" => ([1.0, 0.15, 1.0], 0.9),
        "bookshelf" => ([0.9, 0.35, 1.8], 0.0),
        "picture" => ([0.6, 0.1, 0.5], 1.2),
        "counter" => ([1.5, 0.6, 0.9], 0.0),
        "desk" => ([1.4, 0.7, 0.75], 0.0),
        "curtain" => ([1.2, 0.15, 2.0], 0.0),
        "refrigerator" => ([0.8, 0.7, 1.8], 0.0),
        "shower curtain" => ([1.0, 0.1, 1.9], 0.0),
        "toilet" => ([0.4, 0.65, 0.75], 0.0),
        "sink" => ([0.6, 0.5, 0.3], 0.7),
        "bathtub" => ([1.6, 0.75, 0.55], 0.0),
        _ => ([0.7, 0.7, 0.7], 0.0),
    };
    ClassShape { size, base_z }
}

/// Scene types available to the synthetic generator and the object
/// classes each may contain.
pub const SCENE_TYPES: &[(&str, &[&str])] = &[
    ("kitchen", &["cabinet", "counter", "refrigerator", "sink", "table", "chair"]),
    ("office", &["desk", "chair", "bookshelf", "cabinet", "picture", "sofa"]),
    ("bathroom", &["toilet", "bathtub", "shower curtain", "sink", "curtain", "door"]),
];

pub fn scene_type_classes(scene_type: &str) -> Result<Vec<usize>> {
    let (_, names) = SCENE_TYPES
        .iter()
        .find(|(t, _)| *t == scene_type)
        .ok_or_else(|| Error::UnknownSceneType(scene_type.to_string()))?;
    names.iter().map(|n| class_id(n)).collect()
}

pub fn scene_type_names() -> Vec<&'static str> {
    SCENE_TYPES.iter().map(|(t, _)| *t).collect()
}

/// Named colours used for synthetic objects.
pub const COLORS: &[(&str, [f64; 3])] = &[
    ("red", [0.8, 0.1, 0.1]),
    ("green", [0.1, 0.7, 0.2]),
    ("blue", [0.1, 0.2, 0.8]),
    ("white", [0.95, 0.95, 0.95]),
    ("black", [0.05, 0.05, 0.05]),
    ("brown", [0.5, 0.3, 0.1]),
    ("yellow", [0.9, 0.85, 0.1]),
];

pub const NUMBER_WORDS: [&str; 9] = ["zero", "one", "two", "three", "four", "five", "six", "seven", "eight"];

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_is_fixed() {
        assert_eq!(CLASS_NAMES.len(), 18);
        assert_eq!(class_id("refrigerator").unwrap(), 12);
        assert!(class_id("lamp").is_err());
        for (_, classes) in SCENE_TYPES {
            for c in *classes {
                class_id(c).unwrap();
            }
        }
        assert!(scene_type_classes("garage").is_err());
    }
}
