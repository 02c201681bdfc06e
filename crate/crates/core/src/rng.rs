//! Deterministic seed derivation.
//!
//! Every stochastic operation takes an explicit seed, and compound operations
//! (frame averaging, per-column calibration) derive per-unit seeds from it.
//! Derivation goes through SplitMix64 so that neighboring seeds do not yield
//! correlated ChaCha streams and so that output files are byte-identical
//! across runs and platforms.

use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;

/// One SplitMix64 step; good avalanche, stable forever.
fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mix a seed with a stream index (source column, frame number, ...).
pub fn derive(seed: u64, stream: u64) -> u64 {
    let mut s = seed ^ stream.wrapping_mul(0xa076_1d64_78bd_642f);
    let a = splitmix64(&mut s);
    splitmix64(&mut s) ^ a.rotate_left(23)
}

/// Deterministic generator for a derived stream.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(seed, stream))
}
