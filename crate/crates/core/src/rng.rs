//! Seeded random streams.
//!
//! Every run owns a family of independent ChaCha streams derived from one
//! 64-bit seed; the stream id separates the consumers so that adding draws to
//! one (say, a player's policy) never perturbs another (the reward source).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub const REWARD_STREAM: u64 = 0;
pub const ADVERSARY_STREAM: u64 = 1;
/// Player `k` draws from stream `PLAYER_STREAM_BASE + k`.
pub const PLAYER_STREAM_BASE: u64 = 16;

pub fn stream(seed: u64, id: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn player_streams(seed: u64, players: usize) -> Vec<SimRng> {
    (0..players as u64)
        .map(|k| stream(seed, PLAYER_STREAM_BASE + k))
        .collect()
}
