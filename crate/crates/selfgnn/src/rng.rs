//! Named random substreams.
//!
//! Every random draw in the pipeline comes from a stream derived from the
//! run seed plus a short label ("init", "dropout", "partition", ...). Two
//! consumers with different labels never share a stream, so reordering or
//! parallelizing one stage cannot perturb another, and the same
//! (seed, label) pair always reproduces the same sequence.

use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;

/// FNV-1a over a byte string; stable across platforms and releases, unlike
/// `std::hash`'s default hasher.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Deterministic generator for the substream `label` of run seed `seed`.
pub fn named_rng(seed: u64, label: &str) -> ChaCha12Rng {
    let tag = fnv1a(label.as_bytes());
    // Mix the pieces into the 32-byte ChaCha key; the exact scheme only
    // needs to be injective enough that distinct labels give distinct keys.
    let words = [
        seed,
        tag,
        seed.rotate_left(32) ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15),
        fnv1a(&seed.to_le_bytes()) ^ tag.rotate_left(17),
    ];
    let mut key = [0u8; 32];
    for (chunk, w) in key.chunks_exact_mut(8).zip(words) {
        chunk.copy_from_slice(&w.to_le_bytes());
    }
    ChaCha12Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_seed_and_label_reproduce() {
        let a: Vec<u64> = named_rng(7, "init").sample_iter(rand::distributions::Standard).take(8).collect();
        let b: Vec<u64> = named_rng(7, "init").sample_iter(rand::distributions::Standard).take(8).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn labels_separate_streams() {
        let a: u64 = named_rng(7, "init").gen();
        let b: u64 = named_rng(7, "dropout").gen();
        let c: u64 = named_rng(8, "init").gen();
        assert_ne!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn fnv_reference_value() {
        // Published FNV-1a test vector: empty string hashes to the offset
        // basis; "a" to 0xaf63dc4c8601ec8c.
        assert_eq!(fnv1a(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a(b"a"), 0xaf63_dc4c_8601_ec8c);
    }
}
