//! Seeding scheme.
//!
//! Every randomized component draws from a [`ChaCha8Rng`] keyed by the master
//! seed, with the 64-bit ChaCha stream selector derived from a purpose tag and
//! a list of task indices:
//!
//! ```text
//! id = splitmix64(tag)
//! for i in indices: id = splitmix64(id ^ i)
//! rng = ChaCha8Rng::seed_from_u64(master); rng.set_stream(id)
//! ```
//!
//! Grammar sampling, data generation, and each chain therefore consume
//! disjoint streams, and a task's stream depends only on its indices, not on
//! which worker executes it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Grammar = 1,
    Data = 2,
    Chain = 3,
    Pairs = 4,
    Validate = 5,
}

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn stream_id(purpose: Stream, indices: &[u64]) -> u64 {
    indices
        .iter()
        .fold(splitmix64(purpose as u64), |id, &i| splitmix64(id ^ i))
}

pub fn stream_rng(master: u64, purpose: Stream, indices: &[u64]) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream_id(purpose, indices));
    rng
}

/// Derive a 64-bit seed (for example a grammar seed) from the master seed.
pub fn derive_seed(master: u64, purpose: Stream, indices: &[u64]) -> u64 {
    splitmix64(master ^ stream_id(purpose, indices))
}
