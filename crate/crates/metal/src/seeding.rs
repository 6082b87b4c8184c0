//! Deterministic RNG substreams.
//!
//! Every source of randomness in a run is a named substream of the single
//! experiment seed. Streams are keyed by a label plus an index path, so
//! per-task / per-trajectory randomness is independent of execution order and
//! of how work is split across workers.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a reproducible RNG from `(seed, label, path)`.
///
/// The same triple always yields the same stream; distinct triples yield
/// independent streams. ChaCha output is identical across platforms.
pub fn stream(seed: u64, label: &str, path: &[u64]) -> ChaCha8Rng {
    let mut state = seed ^ fnv1a(label.as_bytes());
    let mut key = [0u8; 32];
    for &p in path {
        state ^= splitmix64(&mut state).wrapping_add(p.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    for chunk in key.chunks_exact_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
