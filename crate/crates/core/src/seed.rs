//! Deterministic seed derivation.
//!
//! Every stochastic stage draws from its own ChaCha stream whose seed is
//! derived from the experiment seed and a stage tag. The staged CLI and the
//! in-process pipeline use the same tags, so both see identical randomness.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const TAG_TRAIN_DATA: &str = "train-data";
pub const TAG_TEST_DATA: &str = "test-data";
pub const TAG_SPLIT: &str = "split";
pub const TAG_AUGMENT: &str = "augment";
pub const TAG_DIFFUSION_TRAIN: &str = "diffusion-train";
pub const TAG_GENERATE: &str = "generate";
pub const TAG_LOCALIZER: &str = "localizer";

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(tag: &str) -> u64 {
    tag.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01B3)
    })
}

/// Seed for the stage named `tag` of an experiment seeded with `base`.
pub fn derive(base: u64, tag: &str) -> u64 {
    splitmix64(base ^ splitmix64(fnv1a(tag)))
}

/// Seed for the `index`-th independent substream under `base`.
pub fn substream(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base).wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03)))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
