//! Small numeric helpers shared across modules.
//!
//! Transcendental functions go through `libm` in both std and no_std builds
//! so that scores, losses, and selection orderings are bit-identical across
//! platforms.

use alloc::vec::Vec;

pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

pub(crate) fn ln(x: f64) -> f64 {
    libm::log(x)
}

pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

pub(crate) fn abs(x: f64) -> f64 {
    libm::fabs(x)
}

/// FNV-1a 64-bit hash. Stable across platforms, used for feature hashing
/// and content fingerprints.
pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    fnv1a64_seeded(0xcbf2_9ce4_8422_2325, bytes)
}

pub(crate) fn fnv1a64_seeded(basis: u64, bytes: &[u8]) -> u64 {
    let mut hash = basis;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Log-probabilities of a softmax over `scores`, computed with max-score
/// subtraction.
pub(crate) fn log_softmax(scores: &[f64]) -> Vec<f64> {
    debug_assert!(!scores.is_empty());
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_z = ln(scores.iter().map(|&s| exp(s - max)).sum::<f64>()) + max;
    scores.iter().map(|&s| s - log_z).collect()
}
