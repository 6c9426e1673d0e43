//! Hierarchical seed derivation.
//!
//! Every random stream in the toolkit is a `ChaCha8Rng` seeded with
//! `derive(parent, tag, index)`:
//!
//! ```text
//! h = fnv1a64(tag)
//! derive(parent, tag, index) = splitmix64(splitmix64(parent ^ h) ^ index)
//! ```
//!
//! The master seed of a run fans out as `scene -> selection -> trees -> folds`,
//! and the generator for a stream is `ChaCha8Rng::seed_from_u64(derived)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

pub fn fnv1a64(tag: &str) -> u64 {
    tag.bytes()
        .fold(FNV_OFFSET, |h, b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Child seed for stream `tag`, element `index`, under `parent`.
pub fn derive(parent: u64, tag: &str, index: u64) -> u64 {
    splitmix64(splitmix64(parent ^ fnv1a64(tag)) ^ index)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a64(""), FNV_OFFSET);
        assert_eq!(fnv1a64("a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn derive_separates_tags_and_indices() {
        let a = derive(7, "trees", 0);
        assert_ne!(a, derive(7, "trees", 1));
        assert_ne!(a, derive(7, "folds", 0));
        assert_ne!(a, derive(8, "trees", 0));
        assert_eq!(a, derive(7, "trees", 0));
    }
}
