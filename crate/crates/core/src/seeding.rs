//! Deterministic seed derivation.
//!
//! Sweeps draw many independent random streams (training-set sampling,
//! permutation sampling, mock noise) from one master seed. Each stream
//! gets a sub-seed mixed from the master seed and a stable string tag,
//! so adding a new stream never shifts the randomness of existing ones.

/// FNV-1a over bytes; stable across platforms.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

/// SplitMix64 finalizer; a cheap, well-distributed 64-bit mixer.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Sub-seed for the stream named by `tag` under a master seed.
pub fn derive_seed(master: u64, tag: &str) -> u64 {
    splitmix64(master ^ fnv1a(tag.as_bytes()))
}

/// Deterministic pseudo-noise in [-1, 1] keyed by seed and string parts.
pub fn unit_noise(seed: u64, parts: &[&str]) -> f64 {
    let mut h = seed;
    for part in parts {
        h = splitmix64(h ^ fnv1a(part.as_bytes()));
    }
    // 53 high bits → [0, 1) → [-1, 1).
    let unit = (h >> 11) as f64 / (1u64 << 53) as f64;
    2.0 * unit - 1.0
}
