//! Seed derivation. A single master seed fans out into independent
//! per-stage streams so any stage can be replayed in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StageRng = ChaCha8Rng;

const GOLDEN_GAMMA: u64 = 0x9e37_79b9_7f4a_7c15;

/// One step of the splitmix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Sub-seed for a named stage. Stable across platforms and releases.
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    splitmix64(master ^ splitmix64(fnv1a(stage)))
}

/// Sub-seed for the `index`-th repetition of a named stage.
pub fn derive_indexed(master: u64, stage: &str, index: u64) -> u64 {
    splitmix64(derive_seed(master, stage).wrapping_add(index.wrapping_mul(GOLDEN_GAMMA)))
}

pub fn stage_rng(seed: u64) -> StageRng {
    ChaCha8Rng::seed_from_u64(seed)
}
