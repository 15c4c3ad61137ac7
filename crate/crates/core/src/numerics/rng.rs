//! Reproducible random streams.
//!
//! Every stochastic step in the crate draws from a ChaCha8 stream whose
//! 256-bit key is derived from a master seed and a tuple of integer
//! coordinates (stream tag, group index, replicate index, ...). Streams for
//! distinct coordinates are independent, and a stream depends only on its
//! coordinates, so results do not depend on the order in which parallel
//! tasks execute.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The generator used throughout the crate.
pub type Rng = ChaCha8Rng;

/// SplitMix64 increment (the 64-bit golden ratio).
const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// Stream tags keep unrelated consumers of the same master seed apart.
pub mod tags {
    pub const BOOTSTRAP_VARIANCE: u64 = 1;
    pub const BOOTSTRAP_PERCENTILE: u64 = 2;
    pub const CV_FOLDS: u64 = 3;
    pub const RBLPR: u64 = 4;
    pub const POPULATION: u64 = 5;
    pub const SAMPLE: u64 = 6;
    pub const BENCHMARK_DRAW: u64 = 7;
    pub const CV_VARIANCE: u64 = 8;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN_GAMMA);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a coordinate tuple into a single 64-bit value.
pub fn derive_seed(master: u64, coords: &[u64]) -> u64 {
    let mut state = splitmix64(master);
    for (i, &c) in coords.iter().enumerate() {
        let salt = GOLDEN_GAMMA.wrapping_mul(i as u64 + 1);
        state = splitmix64(state ^ splitmix64(c ^ salt));
    }
    state
}

/// Returns the stream for `(master, coords)`.
pub fn stream(master: u64, coords: &[u64]) -> Rng {
    let mut state = derive_seed(master, coords);
    let mut key = [0u8; 32];
    for chunk in key.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    Rng::from_seed(key)
}
