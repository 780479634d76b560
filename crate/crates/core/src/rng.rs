//! Deterministic named random substreams.
//!
//! Every stochastic choice in the engine draws from a `ChaCha8Rng` keyed by
//! `(run_seed, label, indices…)`. Substreams are independent of each other and
//! of call order, so adding a consumer never perturbs existing ones.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// RNG for the substream named `label` under `seed`, further keyed by
/// `indices` (task id, epoch, trial…).
pub fn substream(seed: u64, label: &str, indices: &[u64]) -> ChaCha8Rng {
    let mut key = splitmix64(seed ^ fnv1a64(label.as_bytes()));
    for &ix in indices {
        key = splitmix64(key ^ ix.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    ChaCha8Rng::seed_from_u64(key)
}

/// In-place Fisher-Yates shuffle.
pub fn shuffle<T>(items: &mut [T], rng: &mut ChaCha8Rng) {
    use rand::seq::SliceRandom;
    items.shuffle(rng);
}

/// `k` distinct indices drawn uniformly from `0..n`, in draw order.
pub fn sample_distinct(rng: &mut ChaCha8Rng, n: usize, k: usize) -> Vec<usize> {
    rand::seq::index::sample(rng, n, k).into_vec()
}
