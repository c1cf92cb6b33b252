//! Counter-style stream derivation.
//!
//! Every random draw is tied to a `(seed, replicate, row)` triple: the seed and
//! replicate pick a ChaCha key and the row picks the ChaCha stream. A field is
//! therefore bit-identical no matter which thread generates which row.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent seed from a parent seed and a tag.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    mix64(seed ^ mix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d)))
}

/// Generator for one row of one replicate.
pub fn row_rng(seed: u64, replicate: u64, row: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    let mut s = derive_seed(seed, replicate);
    for chunk in key.chunks_mut(8) {
        s = mix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(row);
    rng
}
