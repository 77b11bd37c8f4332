//! Single-file checkpoints: an 8-byte magic, a little-endian `u64` manifest
//! length, a UTF-8 JSON manifest, then every tensor as little-endian `f32`.
//! The byte layout is described in `docs/checkpoint_format.md`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::nn::ParamStore;
use crate::tensor::Matrix;

pub const MAGIC: &[u8; 8] = b"C3DCKPT1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CheckpointKind {
    Pretrain,
    Vqa,
}

/// All randomness is derived from the run seed and the schedule position,
/// so these two numbers are the complete generator state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Optimizer steps taken when the checkpoint was written.
    pub position: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    /// Model and training configuration snapshot.
    pub config: serde_json::Value,
    pub step: u64,
    pub rng: RngState,
    /// Answer vocabulary for question-answering checkpoints.
    pub vocab: Option<Vec<String>>,
    pub params: ParamStore,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    /// Byte offset from the start of the data section.
    offset: u64,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    kind: CheckpointKind,
    config: serde_json::Value,
    step: u64,
    rng: RngState,
    vocab: Option<Vec<String>>,
    data_sha256: String,
    tensors: Vec<TensorEntry>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut data = Vec::with_capacity(self.params.num_scalars() * 4);
        let mut tensors = Vec::with_capacity(self.params.len());
        for (name, m) in self.params.iter() {
            if !m.is_finite() {
                return Err(Error::Checkpoint(format!("tensor {name} has non-finite values")));
            }
            tensors.push(TensorEntry { name: name.to_string(), shape: [m.rows(), m.cols()], offset: data.len() as u64 });
            for &x in m.data() {
                data.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            kind: self.kind,
            config: self.config.clone(),
            step: self.step,
            rng: self.rng,
            vocab: self.vocab.clone(),
            data_sha256: hex(&Sha256::digest(&data)),
            tensors,
        };
        let json = serde_json::to_vec(&manifest).map_err(|e| Error::Checkpoint(e.to_string()))?;
        let mut out = Vec::with_capacity(16 + json.len() + data.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&data);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let data_start = 16usize.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest =
            serde_json::from_slice(&bytes[16..data_start]).map_err(|e| Error::Checkpoint(format!("manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported format version {}", manifest.format_version)));
        }
        let data = &bytes[data_start..];
        if hex(&Sha256::digest(data)) != manifest.data_sha256 {
            return Err(bad("tensor data checksum mismatch"));
        }
        let mut params = ParamStore::new();
        for t in &manifest.tensors {
            let n = t.shape[0] * t.shape[1];
            let start = t.offset as usize;
            let end = start.checked_add(n * 4).filter(|&e| e <= data.len()).ok_or_else(|| bad("tensor out of range"))?;
            let values = data[start..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
                .collect();
            if params.id(&t.name).is_some() {
                return Err(Error::Checkpoint(format!("duplicate tensor {}", t.name)));
            }
            params.add(t.name.clone(), Matrix::from_vec(t.shape[0], t.shape[1], values));
        }
        Ok(Checkpoint {
            kind: manifest.kind,
            config: manifest.config,
            step: manifest.step,
            rng: manifest.rng,
            vocab: manifest.vocab,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }

    /// Deserializes the config snapshot.
    pub fn config_as<T: serde::de::DeserializeOwned>(&self) -> Result<T> {
        serde_json::from_value(self.config.clone()).map_err(|e| Error::Checkpoint(format!("config snapshot: {e}")))
    }
}
