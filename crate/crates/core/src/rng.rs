//! Seed derivation.
//!
//! Every random draw in the crate comes from a ChaCha8 generator keyed by a
//! `u64` seed and a stream number. Machine `i` of a generated dataset uses
//! stream `i`; the named streams below sit at the top of the stream space so
//! they never collide with a machine index.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const STREAM_SEEDING: u64 = u64::MAX;
pub const STREAM_PERTURB: u64 = u64::MAX - 1;
pub const STREAM_PARTITION: u64 = u64::MAX - 2;
pub const STREAM_CENTERS: u64 = u64::MAX - 3;

pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn machine_rng(seed: u64, machine: usize) -> ChaCha8Rng {
    stream_rng(seed, machine as u64)
}
