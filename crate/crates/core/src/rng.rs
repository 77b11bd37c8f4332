//! Deterministic random streams.
//!
//! Every stream is ChaCha8 seeded from SHA-256 of a run seed plus a list of
//! tags (epoch, sample, purpose, ...). Streams therefore never depend on
//! evaluation order, and values are stable across platforms.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub fn stream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(b"clip3d-stream");
    h.update(seed.to_le_bytes());
    for t in tags {
        h.update(t.to_le_bytes());
    }
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Stream keyed by arbitrary bytes.
pub fn stream_from_bytes(domain: &[u8], bytes: &[u8]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update((domain.len() as u64).to_le_bytes());
    h.update(domain);
    h.update(bytes);
    ChaCha8Rng::from_seed(h.finalize().into())
}

/// Purpose tags used with [`stream`].
pub mod tag {
    pub const INIT: u64 = 1;
    pub const SHUFFLE: u64 = 2;
    pub const AUGMENT: u64 = 3;
    pub const DROPOUT: u64 = 4;
    pub const TSNE: u64 = 7;
    pub const SPLIT: u64 = 8;
    pub const HEADS: u64 = 9;
}
