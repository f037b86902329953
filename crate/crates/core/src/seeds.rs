//! Deterministic seed derivation.
//!
//! Benchmark repetitions use `base_seed + repetition_index`; independent
//! random streams inside one repetition (data, split, weights, clustering)
//! are derived from that seed with distinct salts via a splitmix64 step.

/// Derive an independent stream seed from `(seed, salt)`.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for repetition `rep` of a benchmark run.
pub fn repetition_seed(base_seed: u64, rep: usize) -> u64 {
    base_seed.wrapping_add(rep as u64)
}
