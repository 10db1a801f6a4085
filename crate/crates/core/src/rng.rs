//! Keyed random streams.
//!
//! Every random draw in a run comes from a ChaCha stream whose 256-bit key is
//! built from `(master_seed, learner, meta_iteration)` plus a domain tag.
//! Distinct keys give independent streams, so the draws a learner sees in a
//! given meta iteration do not depend on scheduling, worker count, or on how
//! many draws any other learner made.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

const LEARNER_TAG: &[u8; 8] = b"mavg-lrn";

/// Builds a stream from three 64-bit words and an 8-byte domain tag.
pub fn keyed_stream(tag: &[u8; 8], a: u64, b: u64, c: u64) -> Stream {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&a.to_le_bytes());
    key[8..16].copy_from_slice(&b.to_le_bytes());
    key[16..24].copy_from_slice(&c.to_le_bytes());
    key[24..].copy_from_slice(tag);
    ChaCha8Rng::from_seed(key)
}

/// Stream for learner `learner` (1-based) at meta iteration `iteration` (1-based).
pub fn learner_stream(master_seed: u64, learner: usize, iteration: usize) -> Stream {
    keyed_stream(LEARNER_TAG, master_seed, learner as u64, iteration as u64)
}
