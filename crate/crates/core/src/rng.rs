//! Pinned pseudo-random streams.
//!
//! Every stream is a PCG XSL-RR 128/64 generator (`rand_pcg::Pcg64`) whose
//! state and stream selector come from SplitMix64 mixing of a master seed
//! with a path of domain tags, e.g. `[TRANSFORM, w]`. Uniform variates take
//! the top 53 bits of each 64-bit output: `(x >> 11) · 2⁻⁵³ ∈ [0, 1)`.

use rand_pcg::Pcg64;

pub use rand_pcg::rand_core::Rng;

pub const TAG_TRANSFORM: u64 = 0x5452_414e_5346_4f52;
pub const TAG_DATASET: u64 = 0x4441_5441_5345_5400;
pub const TAG_LATENTS: u64 = 0x4c41_5445_4e54_5300;
pub const TAG_SHUFFLE: u64 = 0x5348_5546_464c_4500;

pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Hierarchical seed: folds each tag into the running value.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter()
        .fold(splitmix64(master), |acc, &tag| splitmix64(acc ^ splitmix64(tag)))
}

pub fn stream(master: u64, path: &[u64]) -> Pcg64 {
    let seed = derive_seed(master, path);
    let hi = splitmix64(seed ^ 0x6a09_e667_f3bc_c908);
    let lo = splitmix64(seed ^ 0xbb67_ae85_84ca_a73b);
    let inc = splitmix64(seed ^ 0x3c6e_f372_fe94_f82b);
    Pcg64::new(((hi as u128) << 64) | lo as u128, inc as u128)
}

#[inline]
pub fn uniform(rng: &mut impl Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}
