//! Counter-based random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 keystream addressed by
//! `(seed, domain, stream, index)`. A particle's stream at a given step does
//! not depend on how work is split across threads, so results are identical
//! for any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Words reserved per index inside one stream (2^32 u32 words).
const INDEX_SHIFT: u32 = 32;

#[derive(Debug, Clone)]
pub struct Streams {
    key: [u8; 32],
}

impl Streams {
    pub fn new(seed: u64, domain: &str) -> Self {
        let mut h = Sha256::new();
        h.update(seed.to_le_bytes());
        h.update(domain.as_bytes());
        Streams { key: h.finalize().into() }
    }

    /// Independent generator for `(stream, index)`.
    pub fn rng(&self, stream: u64, index: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::from_seed(self.key);
        r.set_stream(stream);
        r.set_word_pos((index as u128) << INDEX_SHIFT);
        r
    }
}

/// Child seed for replication `index` of a run seeded with `seed`.
pub fn derive_seed(seed: u64, domain: &str, index: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(domain.as_bytes());
    h.update(index.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
