//! Seeded random streams.
//!
//! Every consumer draws from a ChaCha8 stream keyed by `(seed, stream id)`.
//! ChaCha is counter based, so streams are independent of each other and of
//! the order in which consumers run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

pub fn stream_rng(seed: u64, stream: u64) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Stable 64-bit FNV-1a hash used to derive stream ids from names.
pub fn stream_id(label: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}
