//! Seeded random streams, one per subsystem.
//!
//! Every subsystem draws from its own ChaCha stream of the run seed, so
//! adding draws in one subsystem never shifts another's samples.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    DataGen = 1,
    Ransac = 2,
    Init = 3,
    Noise = 4,
    Cameras = 5,
    Visibility = 6,
}

pub fn stream_rng(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}

/// A derived `u64` seed for APIs that take one (e.g. RANSAC configs).
pub fn stream_seed(seed: u64, stream: Stream) -> u64 {
    use rand::Rng;
    stream_rng(seed, stream).random()
}
