//! Deterministic, platform-independent RNG derivation.
//!
//! Every source of randomness in the crate is a ChaCha8 stream keyed by a
//! user seed plus a stream tag. Separate tags give statistically independent
//! streams that do not interfere with each other, which is what keeps e.g.
//! input-view sampling identical across pipeline modes that consume different
//! amounts of augmentation randomness.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags for the trainer's independent randomness sources.
pub mod stream {
    pub const SCENE: u64 = 0x5343_454e;
    pub const INIT: u64 = 0x494e_4954;
    pub const INPUT_SAMPLING: u64 = 0x494e_5055;
    pub const AUGMENT: u64 = 0x4155_474d;
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes a base seed with any number of tag words into a single 64-bit key.
pub fn mix(base: u64, tags: &[u64]) -> u64 {
    let mut state = base ^ 0x243f_6a88_85a3_08d3;
    let mut acc = splitmix64(&mut state);
    for &t in tags {
        state ^= t;
        acc ^= splitmix64(&mut state);
    }
    acc
}

/// Deterministic generator for `(seed, tags...)`.
pub fn seeded_rng(base: u64, tags: &[u64]) -> ChaCha8Rng {
    let key = mix(base, tags);
    let mut seed_bytes = [0u8; 32];
    let mut state = key;
    for chunk in seed_bytes.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(seed_bytes)
}
