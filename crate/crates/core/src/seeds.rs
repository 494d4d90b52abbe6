//! Deterministic seed splitting.
//!
//! Independent streams are derived from a root seed with one SplitMix64
//! mixing round over `root ^ (stream * golden)`; every stochastic component
//! (phantom layout, per-frame noise, average selection, shuffling) draws
//! from its own derived stream so results do not depend on evaluation order.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn split_seed(root: u64, stream: u64) -> u64 {
    let mut z = root ^ stream.wrapping_add(1).wrapping_mul(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for a named purpose within a case.
pub fn case_seed(root: u64, case_id: u64, purpose: u64) -> u64 {
    split_seed(split_seed(root, case_id), purpose)
}
