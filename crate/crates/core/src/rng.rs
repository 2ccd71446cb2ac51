//! Seed derivation. Every random stream in a run (initialization,
//! shuffling, dropout, Monte Carlo) is derived from one root seed, a stream
//! tag and an index, so a run is reproducible from a single number.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Dropout = 3,
    MonteCarlo = 4,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `splitmix64(splitmix64(root ^ stream) ^ index)`.
pub fn derive_seed(root: u64, stream: Stream, index: u64) -> u64 {
    splitmix64(splitmix64(root ^ (stream as u64).wrapping_mul(0xA24B_AED4_963E_E407)) ^ index)
}

pub fn stream_rng(root: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, stream, index))
}
