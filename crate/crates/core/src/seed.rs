//! Seed derivation. Every random stream in a run is split off one root seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// 64-bit FNV-1a. Stable across platforms and toolchains.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Mixes two 64-bit words into one well-distributed word.
pub fn mix(a: u64, b: u64) -> u64 {
    splitmix64(a ^ splitmix64(b))
}

/// Derives the seed of a named subsystem from the root seed.
pub fn derive(root: u64, label: &str) -> u64 {
    mix(root, fnv1a(label.as_bytes()))
}

/// Deterministic RNG for a named subsystem.
pub fn rng_for(root: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive(root, label))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_split_streams() {
        assert_ne!(derive(7, "decode"), derive(7, "train"));
        assert_eq!(derive(7, "decode"), derive(7, "decode"));
        assert_ne!(derive(7, "decode"), derive(8, "decode"));
    }

    #[test]
    fn fnv_reference_value() {
        // Published FNV-1a 64 test vector.
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }
}
