//! Frozen text/image scene embeddings and question token embeddings.
//!
//! Real CLIP inference runs out of process; this module reads its output
//! from JSONL files. [`stub_embed`] is a deterministic stand-in used by the
//! tests and by the synthetic dataset generator.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::SceneRecord;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::Matrix;
use crate::text::tokenize;

pub const EMBED_DIM: usize = 512;
pub const MAX_TOKENS: usize = 77;
pub const START_TOKEN: &str = "<start>";
pub const EOT_TOKEN: &str = "<eot>";

/// Default embedding file location when no flag is given.
pub const EMBED_PATH_ENV: &str = "CLIP3D_EMBED_PATH";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Image,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Text => "text",
            Modality::Image => "image",
        }
    }
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModalEmbedding {
    pub scene_id: String,
    pub modality: Modality,
    pub vector: Vec<f64>,
}

/// Immutable store keyed by `(scene_id, modality)`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingStore {
    entries: BTreeMap<(String, Modality), Vec<f64>>,
}

impl EmbeddingStore {
    pub fn from_records(records: Vec<ModalEmbedding>) -> Result<Self> {
        let mut entries = BTreeMap::new();
        for (i, r) in records.into_iter().enumerate() {
            check_vector(&r.vector).map_err(|message| Error::Embedding { line: i + 1, message })?;
            let key = (r.scene_id, r.modality);
            if entries.contains_key(&key) {
                return Err(Error::Embedding {
                    line: i + 1,
                    message: format!("duplicate key ({}, {})", key.0, key.1),
                });
            }
            entries.insert(key, r.vector);
        }
        Ok(EmbeddingStore { entries })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, scene_id: &str, modality: Modality) -> Option<&[f64]> {
        self.entries
            .get(&(scene_id.to_string(), modality))
            .map(Vec::as_slice)
    }

    pub fn require(&self, scene_id: &str, modality: Modality) -> Result<&[f64]> {
        self.get(scene_id, modality).ok_or_else(|| Error::MissingEmbedding {
            scene_id: scene_id.to_string(),
            modality: modality.to_string(),
        })
    }

    pub fn records(&self) -> Vec<ModalEmbedding> {
        self.entries
            .iter()
            .map(|((scene_id, modality), vector)| ModalEmbedding {
                scene_id: scene_id.clone(),
                modality: *modality,
                vector: vector.clone(),
            })
            .collect()
    }

    /// SHA-256 over every key and the bit pattern of every value.
    pub fn checksum(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        for ((id, m), v) in &self.entries {
            h.update(id.as_bytes());
            h.update(m.as_str().as_bytes());
            for x in v {
                h.update(x.to_bits().to_le_bytes());
            }
        }
        h.finalize().into()
    }
}

fn check_vector(v: &[f64]) -> std::result::Result<(), String> {
    if v.len() != EMBED_DIM {
        return Err(format!("vector has length {}, expected {EMBED_DIM}", v.len()));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(format!("non-finite value at position {i}"));
    }
    Ok(())
}

/// Reads one JSON object per line: `{"scene_id", "modality", "vector"}`.
/// Blank lines are skipped.
pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    let mut lines = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ModalEmbedding = serde_json::from_str(&line).map_err(|e| Error::Embedding {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
        lines.push(i + 1);
    }
    EmbeddingStore::from_records(records).map_err(|e| match e {
        Error::Embedding { line, message } => Error::Embedding { line: lines[line - 1], message },
        other => other,
    })
}

pub fn write_embeddings(path: impl AsRef<Path>, records: &[ModalEmbedding]) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    for r in records {
        let line = serde_json::to_string(r).expect("serializable");
        writeln!(f, "{line}").map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

/// Deterministic unit vector for `(tag, text)`: ChaCha8 seeded from
/// SHA-256 of the tag and text, `dim` standard-normal draws, L2-normalized.
pub fn stub_embed(text: &str, tag: &str, dim: usize) -> Result<Vec<f64>> {
    if text.is_empty() {
        return Err(Error::Empty("stub embedding of empty text"));
    }
    let mut key = Vec::with_capacity(tag.len() + text.len() + 1);
    key.extend_from_slice(tag.as_bytes());
    key.push(0);
    key.extend_from_slice(text.as_bytes());
    let mut rng = rng::stream_from_bytes(b"clip3d-stub-embed", &key);
    let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter_mut().for_each(|x| *x /= n);
    Ok(v)
}

const STOPWORDS: &[&str] = &["a", "an", "the", "with", "and", "of", "in", "is", "are", "there"];

/// Bag-of-words stand-in for a sentence embedding: the normalized sum of the
/// `word` stub vectors of the sentence's content tokens (stopwords and
/// punctuation skipped). Sentences that share words get correlated vectors,
/// which the per-string [`stub_embed`] cannot provide.
pub fn bag_embed(text: &str, dim: usize) -> Result<Vec<f64>> {
    if text.trim().is_empty() {
        return Err(Error::Empty("bag embedding of empty text"));
    }
    let tokens: Vec<String> = tokenize(text)
        .into_iter()
        .filter(|t| t.chars().any(char::is_alphanumeric) && !STOPWORDS.contains(&t.as_str()))
        .collect();
    if tokens.is_empty() {
        return stub_embed(text, "word", dim);
    }
    let mut sum = vec![0.0; dim];
    for t in &tokens {
        for (s, x) in sum.iter_mut().zip(stub_embed(t, "word", dim)?) {
            *s += x;
        }
    }
    let n = sum.iter().map(|x| x * x).sum::<f64>().sqrt();
    sum.iter_mut().for_each(|x| *x /= n);
    Ok(sum)
}

/// Stub pair for a synthetic scene: the text vector embeds the description
/// and the image vector the canonical layout string.
pub fn scene_stub_embeddings(scenes: &[SceneRecord]) -> Result<Vec<ModalEmbedding>> {
    let mut out = Vec::with_capacity(2 * scenes.len());
    for s in scenes {
        for (modality, text) in [(Modality::Text, s.description.clone()), (Modality::Image, s.layout_string())] {
            out.push(ModalEmbedding { scene_id: s.scene_id.clone(), modality, vector: bag_embed(&text, EMBED_DIM)? });
        }
    }
    Ok(out)
}

/// Word-level embeddings of one question.
#[derive(Clone, Debug, PartialEq)]
pub struct QuestionTokens {
    /// `L×512`.
    pub embeddings: Matrix,
    pub eot_index: usize,
    pub token_strings: Vec<String>,
}

impl QuestionTokens {
    pub fn len(&self) -> usize {
        self.token_strings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_strings.is_empty()
    }
}

/// Optional precomputed token vectors (`{"token", "vector"}` per line);
/// tokens missing from the table fall back to the stub.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WordTable {
    vectors: BTreeMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct RawToken {
    token: String,
    vector: Vec<f64>,
}

impl WordTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut vectors = BTreeMap::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let raw: RawToken =
                serde_json::from_str(line).map_err(|e| Error::Embedding { line: i + 1, message: e.to_string() })?;
            check_vector(&raw.vector).map_err(|message| Error::Embedding { line: i + 1, message })?;
            if vectors.insert(raw.token.clone(), raw.vector).is_some() {
                return Err(Error::Embedding { line: i + 1, message: format!("duplicate token {:?}", raw.token) });
            }
        }
        Ok(WordTable { vectors })
    }

    fn embed(&self, token: &str) -> Vec<f64> {
        match self.vectors.get(token) {
            Some(v) => v.clone(),
            None => stub_embed(token, "word", EMBED_DIM).expect("tokens are nonempty"),
        }
    }
}

/// Start token, word and punctuation tokens, end-of-text token; at most
/// [`MAX_TOKENS`] in total.
pub fn tokenize_question(text: &str) -> QuestionTokens {
    tokenize_question_with(text, &WordTable::default())
}

pub fn tokenize_question_with(text: &str, table: &WordTable) -> QuestionTokens {
    let mut token_strings = vec![START_TOKEN.to_string()];
    token_strings.extend(tokenize(text).into_iter().take(MAX_TOKENS - 2));
    token_strings.push(EOT_TOKEN.to_string());
    let mut embeddings = Matrix::zeros(token_strings.len(), EMBED_DIM);
    for (i, t) in token_strings.iter().enumerate() {
        embeddings.row_mut(i).copy_from_slice(&table.embed(t));
    }
    QuestionTokens {
        eot_index: token_strings.len() - 1,
        embeddings,
        token_strings,
    }
}

pub fn cosine_similarity(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, m: Modality, v: Vec<f64>) -> ModalEmbedding {
        ModalEmbedding { scene_id: id.into(), modality: m, vector: v }
    }

    #[test]
    fn stub_is_deterministic_and_unit() {
        let a = stub_embed("a red chair", "text", 512).unwrap();
        assert_eq!(a, stub_embed("a red chair", "text", 512).unwrap());
        assert_ne!(a, stub_embed("a red chair", "image", 512).unwrap());
        let n: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        assert!(stub_embed("", "text", 512).is_err());
    }

    #[test]
    fn distinct_texts_are_nearly_orthogonal() {
        let texts: Vec<String> = (0..101).map(|i| format!("scene description {i}")).collect();
        for w in texts.windows(2) {
            let a = stub_embed(&w[0], "text", 512).unwrap();
            let b = stub_embed(&w[1], "text", 512).unwrap();
            assert!(cosine_similarity(&a, &b) < 0.5);
        }
    }

    #[test]
    fn stub_mean_abs_cosine_is_small() {
        let vs: Vec<Vec<f64>> = (0..200).map(|i| stub_embed(&format!("text number {i}"), "text", 512).unwrap()).collect();
        let mut total = 0.0;
        let mut count = 0;
        for i in 0..vs.len() {
            for j in 0..i {
                total += cosine_similarity(&vs[i], &vs[j]).abs();
                count += 1;
            }
        }
        assert!(total / (count as f64) < 0.15);
    }

    #[test]
    fn bag_embedding_shares_words() {
        let a = bag_embed("a kitchen with a red sink", 512).unwrap();
        let b = bag_embed("kitchen: red sink south", 512).unwrap();
        let c = bag_embed("an office with a blue desk", 512).unwrap();
        assert!(cosine_similarity(&a, &b) > 0.8);
        assert!(cosine_similarity(&a, &c) < 0.3);
    }

    #[test]
    fn question_tokenization() {
        let q = tokenize_question("Is it red?");
        assert_eq!(q.token_strings, ["<start>", "is", "it", "red", "?", "<eot>"]);
        assert_eq!(q.eot_index, 5);
        assert_eq!(q.embeddings.shape(), (6, 512));
        let long = vec!["word"; 100].join(" ");
        let q = tokenize_question(&long);
        assert_eq!((q.len(), q.eot_index), (77, 76));
        assert_eq!(tokenize_question("Is it red?"), tokenize_question("Is it red?"));
        let empty = tokenize_question("   ");
        assert_eq!(empty.token_strings, ["<start>", "<eot>"]);
    }

    #[test]
    fn store_rejects_bad_records() {
        let v = vec![0.5; 512];
        let ok = EmbeddingStore::from_records(vec![rec("a", Modality::Text, v.clone()), rec("a", Modality::Image, v.clone())]);
        assert_eq!(ok.unwrap().len(), 2);
        assert!(EmbeddingStore::from_records(vec![rec("a", Modality::Text, v.clone()), rec("a", Modality::Text, v)]).is_err());
        let err = EmbeddingStore::from_records(vec![rec("a", Modality::Text, vec![0.1; 511])]).unwrap_err();
        assert!(err.to_string().contains("line 1") && err.to_string().contains("511"));
    }

    #[test]
    fn file_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("e.jsonl");
        let recs = vec![
            rec("s1", Modality::Text, stub_embed("x", "text", 512).unwrap()),
            rec("s1", Modality::Image, stub_embed("y", "image", 512).unwrap().iter().map(|v| v / 3.0).collect()),
        ];
        write_embeddings(&p, &recs).unwrap();
        let store = load_embeddings(&p).unwrap();
        for r in &recs {
            let got = store.get(&r.scene_id, r.modality).unwrap();
            assert!(got.iter().zip(&r.vector).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
        fs::write(&p, format!("{}\n{{\"scene_id\":\"z\",\"modality\":\"text\",\"vector\":[1.0]}}\n", serde_json::to_string(&recs[0]).unwrap())).unwrap();
        match load_embeddings(&p) {
            Err(Error::Embedding { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
