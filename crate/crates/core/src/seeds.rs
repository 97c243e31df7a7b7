//! Seed derivation. Every random draw in training is keyed by the run seed
//! plus a purpose tag and its position (epoch, step), so nothing depends on
//! how many draws happened earlier.

pub(crate) const SHUFFLE: u64 = 1;
pub(crate) const AUGMENT: u64 = 2;
pub(crate) const KMEANS: u64 = 3;
pub(crate) const INIT: u64 = 4;
pub(crate) const LABEL_SUBSET: u64 = 5;
pub(crate) const SYNTH: u64 = 6;
pub(crate) const DOWNSTREAM: u64 = 7;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `parts` into `seed`.
pub fn mix(seed: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(seed), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}
