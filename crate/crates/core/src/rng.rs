//! Seed derivation for independent, reproducible random streams.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Stream tags mixed into derived seeds so that unrelated consumers never
/// share a stream.
pub mod stream {
    pub const CLIENT: u64 = 1;
    pub const COORDINATOR: u64 = 2;
    pub const TOPOLOGY: u64 = 3;
    pub const INIT: u64 = 4;
    pub const TRAIN_DATA: u64 = 5;
    pub const PARTITION: u64 = 6;
    pub const TEST_DATA: u64 = 7;
    pub const QUADRATIC: u64 = 8;
    pub const JITTER: u64 = 9;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Hashes `base` together with an ordered list of tags.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |h, &p| splitmix64(h ^ splitmix64(p)))
}

pub fn stream_rng(base: u64, parts: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

/// The private stream of one client in one round.
pub fn client_rng(seed: u64, client: usize, round: usize) -> StreamRng {
    stream_rng(seed, &[stream::CLIENT, client as u64, round as u64])
}
