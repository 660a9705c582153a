//! Counter-based random streams.
//!
//! Every stream is addressed by a master seed plus a path of integer
//! coordinates (sample index, realization index, grid cell, ...). The path is
//! folded into a 256-bit ChaCha key with a SplitMix64 finalizer, so a stream
//! never depends on how many numbers were drawn elsewhere. This is what makes
//! the parallel experiments bit-reproducible for any thread count.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

pub type Stream = ChaCha12Rng;

/// Domain tags keep streams used for different purposes apart even when the
/// numeric coordinates coincide.
pub mod domain {
    pub const SOURCE: u64 = 1;
    pub const SUBSPACE: u64 = 2;
    pub const BASIS_COEFF: u64 = 3;
    pub const NOISE: u64 = 4;
    pub const PERMUTATION: u64 = 5;
    pub const SUBSPACE_INDICES: u64 = 6;
    pub const PHANTOM: u64 = 7;
    pub const REFERENCE: u64 = 8;
    pub const RESTART: u64 = 9;
    pub const PROBE: u64 = 10;
    pub const POWER_ITERATION: u64 = 11;
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fold a seed path into a 64-bit digest. Distinct paths (including paths of
/// different length) give distinct digests with overwhelming probability.
pub fn derive_key(master: u64, path: &[u64]) -> u64 {
    let mut h = mix64(master ^ GOLDEN_GAMMA);
    h = mix64(h ^ (path.len() as u64).wrapping_mul(GOLDEN_GAMMA));
    for &p in path {
        h = mix64(h.wrapping_add(GOLDEN_GAMMA) ^ mix64(p.wrapping_add(0x632B_E59B_D9B4_E019)));
    }
    h
}

/// A fresh generator for the stream identified by `(master, path)`.
pub fn stream(master: u64, path: &[u64]) -> Stream {
    let k0 = derive_key(master, path);
    let mut seed = [0u8; 32];
    let mut state = k0;
    for chunk in seed.chunks_exact_mut(8) {
        state = mix64(state.wrapping_add(GOLDEN_GAMMA));
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    ChaCha12Rng::from_seed(seed)
}
