//! Seed-stream derivation.
//!
//! Every random draw in the pipeline comes from a named sub-stream of one
//! 64-bit root seed. Streams are independent ChaCha streams keyed by an
//! FNV-1a hash of the label plus a caller-chosen index, so reruns and
//! parallel schedules see the same bytes per (seed, label, index).

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

/// Mixes an index into a label hash (splitmix64 finalizer).
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives the RNG for sub-stream `(label, index)` of `seed`.
pub fn stream(seed: u64, label: &str, index: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(mix(fnv1a(label.as_bytes()) ^ mix(index)));
    rng
}

/// Stable salt for compound stream keys (e.g. a (tau, k) grid point).
pub fn salt(parts: &[u64]) -> u64 {
    let mut acc = FNV_OFFSET;
    for &p in parts {
        acc = mix(acc ^ p);
    }
    acc
}
