//! Deterministic seed derivation.
//!
//! Every random stage of the pipeline (walks, embedding init, negative
//! sampling, splits, tree bootstraps, ...) draws from its own ChaCha stream
//! whose seed is derived from one master seed. Derivation is pure mixing,
//! so runs are reproducible regardless of thread count or stage order.

/// splitmix64 finalizer; good avalanche, cheap, stable across platforms.
pub fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Combine two words into one well-mixed seed.
pub fn mix2(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

/// Combine three words into one well-mixed seed.
pub fn mix3(a: u64, b: u64, c: u64) -> u64 {
    splitmix64(mix2(a, b) ^ splitmix64(c.wrapping_add(0x6a09_e667_f3bc_c909)))
}

/// Derive the seed for a named pipeline stage from the master seed.
pub fn derive_seed(master: u64, stage: &str) -> u64 {
    // FNV-1a over the stage name, then mixed with the master seed.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in stage.as_bytes() {
        h ^= u64::from(*byte);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    mix2(master, h)
}
