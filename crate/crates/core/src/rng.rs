//! Counter-based random substreams.
//!
//! Every random quantity in the crate is drawn from a ChaCha8 stream keyed by
//! `(seed, domain)` and positioned by an index (draw number, site block, ...).
//! Results therefore do not depend on how work is scheduled across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream domains; each consumer gets its own key space.
pub mod domain {
    pub const SIMULATE: u64 = 0x5349_4d55;
    pub const POSTERIOR: u64 = 0x504f_5354;
    pub const PREDICTIVE: u64 = 0x5052_4544;
    pub const FOLDS: u64 = 0x464f_4c44;
    pub const RESPONSE: u64 = 0x5245_5350;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, domain, index)`.
pub fn substream(seed: u64, domain: u64, index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let words = [
        splitmix64(seed),
        splitmix64(seed ^ domain.rotate_left(17)),
        splitmix64(domain),
        splitmix64(seed.wrapping_add(domain).wrapping_mul(0xD134_2543_DE82_EF95)),
    ];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index);
    rng
}
