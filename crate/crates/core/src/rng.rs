//! Seeded generators. Each subsystem draws from its own ChaCha stream so equal
//! user seeds never yield correlated draws across subsystems.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub(crate) const STREAM_SYNTH: u64 = 1;
pub(crate) const STREAM_TRIPLET_SPACE: u64 = 2;
pub(crate) const STREAM_SOE: u64 = 3;
pub(crate) const STREAM_SPLIT: u64 = 4;
pub(crate) const STREAM_HEAD_INIT: u64 = 5;
pub(crate) const STREAM_HEAD_TRAIN: u64 = 6;
pub(crate) const STREAM_TOKENS: u64 = 7;
pub(crate) const STREAM_ABLATION: u64 = 8;

pub(crate) fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
