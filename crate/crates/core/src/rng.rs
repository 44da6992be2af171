//! Deterministic random streams.
//!
//! Every random quantity is drawn from a stream addressed by the user seed
//! plus a path of integer labels (replication index, bootstrap draw, ...).
//! Streams depend only on their address, so parallel schedules reproduce
//! sequential runs bit for bit.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// 256-bit key for the stream at `path` below `seed`.
fn derive_key(seed: u64, path: &[u64]) -> [u8; 32] {
    let mut h = splitmix64(seed);
    for (depth, &p) in path.iter().enumerate() {
        h = splitmix64(h ^ splitmix64(p.wrapping_add((depth as u64 + 1) << 56)));
    }
    let mut key = [0u8; 32];
    let mut s = h;
    for chunk in key.chunks_exact_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    key
}

pub fn stream(seed: u64, path: &[u64]) -> StreamRng {
    ChaCha8Rng::from_seed(derive_key(seed, path))
}

/// A child seed, for handing a sub-experiment its own seed space.
pub fn child_seed(seed: u64, path: &[u64]) -> u64 {
    let key = derive_key(seed, path);
    u64::from_le_bytes(key[..8].try_into().expect("8 bytes"))
}
