//! Stable sub-seed derivation so a single run seed drives every module.
//!
//! Each consumer of randomness (splitting, init, the synthetic generator,
//! per-fold training, ...) derives its own stream as `sub_seed(seed, TAG)`.
//! Streams stay decoupled: changing how one module consumes its generator
//! cannot shift any other module's draws.

/// Domain tags. Values are arbitrary but frozen; changing one silently
/// changes every artifact downstream of that module.
pub mod tags {
    pub const SPLIT: u64 = 0x5350_4c49_5400_0001;
    pub const INIT: u64 = 0x494e_4954_0000_0002;
    pub const SYNTH: u64 = 0x5359_4e54_4800_0003;
    pub const FOLD: u64 = 0x464f_4c44_0000_0004;
    pub const SHUFFLE: u64 = 0x5348_5546_4600_0005;
}

/// Derives a decorrelated seed for one module (splitmix64 finalizer over
/// the XOR of seed and tag).
pub fn sub_seed(seed: u64, tag: u64) -> u64 {
    let mut z = (seed ^ tag).wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sub-seed with an index, for per-fold / per-item streams.
pub fn sub_seed_indexed(seed: u64, tag: u64, index: u64) -> u64 {
    sub_seed(sub_seed(seed, tag), index.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ 0x1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sub_seeds_are_stable_and_distinct() {
        // Frozen values: artifacts of every past run depend on these.
        assert_eq!(sub_seed(42, tags::SPLIT), sub_seed(42, tags::SPLIT));
        assert_ne!(sub_seed(42, tags::SPLIT), sub_seed(42, tags::INIT));
        assert_ne!(sub_seed(42, tags::SPLIT), sub_seed(43, tags::SPLIT));
        assert_ne!(
            sub_seed_indexed(42, tags::FOLD, 0),
            sub_seed_indexed(42, tags::FOLD, 1)
        );
    }
}
