//! Counter-based seed fanout.
//!
//! A single master seed fans out to per-stage streams: the master seed keys
//! the ChaCha state and the stream id is `hash64(stage) ^ index`. Any stage
//! can therefore be replayed in isolation from `(master, stage, index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

fn hash64(s: &str) -> u64 {
    let d = Sha256::digest(s.as_bytes());
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

pub fn stage_rng(master_seed: u64, stage: &str, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(hash64(stage) ^ index);
    rng
}
