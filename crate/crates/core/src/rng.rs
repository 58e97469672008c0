//! Seeded randomness.
//!
//! Every random draw in the crate goes through [`ChaCha8Rng`] seeded with
//! `seed_from_u64`, and only through the helpers below, so that another
//! implementation can replay the same stream:
//!
//! * uniform reals: `(next_u64() >> 11) * 2^-53`, in `[0, 1)`;
//! * bounded integers: `next_u64() % n`;
//! * shuffles: Fisher-Yates from the back, swapping `i` with `next_u64() % (i + 1)`.

use rand::RngCore;
use rand::SeedableRng;
pub use rand_chacha::ChaCha8Rng;

pub fn seeded(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Derives an independent stream for a named item (an utterance id, a
/// speaker) so that per-item draws do not depend on processing order.
pub fn derived(seed: u64, key: &str) -> ChaCha8Rng {
    seeded(seed ^ fnv1a(key.as_bytes()))
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn unit_f64(rng: &mut impl RngCore) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn uniform(rng: &mut impl RngCore, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * unit_f64(rng)
}

pub fn below(rng: &mut impl RngCore, n: u64) -> u64 {
    debug_assert!(n > 0);
    rng.next_u64() % n
}

pub fn shuffle<T>(rng: &mut impl RngCore, items: &mut [T]) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i as u64 + 1) as usize;
        items.swap(i, j);
    }
}
