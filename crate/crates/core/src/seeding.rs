//! Independent ChaCha streams keyed by `(seed, index)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Generator for stream `index` of run `seed`. Streams never overlap, so
/// episodes and workers can draw in any order without changing results.
pub fn stream_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Derives a child seed for a named purpose, e.g. per-method model init.
pub fn derive_seed(seed: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, folded with the seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ seed;
    for b in tag.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
