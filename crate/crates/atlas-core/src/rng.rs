//! Seed derivation for deterministic random streams.
//!
//! Every stochastic component draws from a [`ChaCha8Rng`] whose seed is
//! derived from the run's root seed plus a list of salts (step index, episode
//! index, policy name hash, ...). Derivation is a splitmix64 fold, so streams
//! for different salt paths are statistically independent and two runs with
//! the same root seed replay byte-identically regardless of thread order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One splitmix64 step: mixes `state` into a well-distributed 64-bit value.
fn splitmix64(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds `salts` into `root` to produce a derived seed.
pub fn derive_seed(root: u64, salts: &[u64]) -> u64 {
    let mut acc = splitmix64(root);
    for &salt in salts {
        acc = splitmix64(acc ^ splitmix64(salt));
    }
    acc
}

/// Returns a ChaCha8 stream for the given root seed and salt path.
pub fn stream(root: u64, salts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(root, salts))
}

/// Hashes a label (for example a policy name) into a salt.
pub fn label_salt(label: &str) -> u64 {
    fnv1a64(0, label.as_bytes())
}

/// Seeded FNV-1a over bytes; the seed is folded in before the data.
pub fn fnv1a64(seed: u64, bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = OFFSET;
    for b in seed.to_le_bytes() {
        hash = (hash ^ u64::from(b)).wrapping_mul(PRIME);
    }
    for &b in bytes {
        hash = (hash ^ u64::from(b)).wrapping_mul(PRIME);
    }
    hash
}
