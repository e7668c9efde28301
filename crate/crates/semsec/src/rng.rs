//! Named, independently seeded random streams.
//!
//! All randomness in the crate flows through [`derive_stream`]: a master
//! seed plus a stream name yields a `ChaCha12Rng` whose sequence depends
//! only on `(master_seed, name)`. Consuming values from one stream never
//! shifts another, which is what makes sweeps and training runs byte
//! reproducible.
//!
//! Stream names used by the harness: `channel`, `noise-leg`, `noise-eve`,
//! `init`, `data`, `ou`, `buffer-sampling`. Sub-streams extend the name
//! with `/` segments (e.g. `init/se`, `point/10/seed0`).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// FNV-1a over a byte string; the stable name hash behind stream keys.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derives a 64-bit sub-seed from a master seed and a stream name.
pub fn derive_seed(master_seed: u64, name: &str) -> u64 {
    // Mix the name hash and master seed through splitmix64 so that close
    // master seeds do not produce correlated streams.
    let mut z = master_seed ^ fnv1a(name.as_bytes());
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives an independent ChaCha12 stream for `(master_seed, name)`.
pub fn derive_stream(master_seed: u64, name: &str) -> ChaCha12Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&fnv1a(name.as_bytes()).to_le_bytes());
    key[16..24].copy_from_slice(&derive_seed(master_seed, name).to_le_bytes());
    key[24..32].copy_from_slice(&(name.len() as u64).to_le_bytes());
    ChaCha12Rng::from_seed(key)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn same_name_same_sequence() {
        let mut a = derive_stream(7, "channel");
        let mut b = derive_stream(7, "channel");
        for _ in 0..100 {
            assert_eq!(a.random::<u64>(), b.random::<u64>());
        }
    }

    #[test]
    fn different_names_are_independent() {
        let mut a = derive_stream(7, "channel");
        let b0: u64 = derive_stream(7, "noise-leg").random();
        // Drain a heavily; a fresh noise-leg stream must be unaffected.
        for _ in 0..10_000 {
            let _: u64 = a.random();
        }
        let b1: u64 = derive_stream(7, "noise-leg").random();
        assert_eq!(b0, b1);
    }

    #[test]
    fn master_seed_changes_everything() {
        let a: u64 = derive_stream(1, "data").random();
        let b: u64 = derive_stream(2, "data").random();
        assert_ne!(a, b);
    }
}
