//! Per-trial seed derivation.
//!
//! Parallel trials must not depend on execution order, so every trial seed is
//! a pure function of the base seed and the trial coordinates.

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for trial `index` derived from `base`.
pub fn derive(base: u64, index: u64) -> u64 {
    mix64(base ^ mix64(index))
}

/// Seed derived from a base and several coordinates.
pub fn derive_all(base: u64, coords: &[u64]) -> u64 {
    coords.iter().fold(base, |acc, &c| derive(acc, c))
}
