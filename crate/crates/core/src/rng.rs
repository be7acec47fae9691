//! Seeded, splittable random streams.
//!
//! Every stochastic stage derives its generator from a root seed plus a path
//! of integer tags (stage, node, sequence index, ...), so results do not
//! depend on thread scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stage tags for [`stream`].
pub mod stage {
    pub const WALK: u64 = 0x5741_4c4b;
    pub const INIT: u64 = 0x494e_4954;
    pub const SPLIT: u64 = 0x5350_4c54;
    pub const SHUFFLE: u64 = 0x5348_4646;
    pub const DROPOUT: u64 = 0x4452_4f50;
    pub const SYNTH: u64 = 0x5359_4e54;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a 64-bit seed from a root seed and a tag path.
pub fn derive(root: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix64(root), |acc, &t| splitmix64(acc ^ splitmix64(t)))
}

/// Independent generator for `(root, tags...)`.
pub fn stream(root: u64, tags: &[u64]) -> StreamRng {
    StreamRng::seed_from_u64(derive(root, tags))
}
