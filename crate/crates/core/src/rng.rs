//! Deterministic random streams.
//!
//! Every consumer asks for a stream keyed by `(seed, domain, coordinates)`;
//! the key is mixed with SplitMix64 into a ChaCha20 seed. Streams for
//! different repeats or iterations never share state, so running repeats in
//! parallel gives the same numbers as running them one after another.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Domain tags keep streams for unrelated purposes apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    TrueB = 1,
    TrainData = 2,
    TestData = 3,
    Noise = 4,
    Folds = 5,
    CpInit = 6,
    Method = 7,
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream(seed: u64, domain: Domain, coords: &[u64]) -> ChaCha20Rng {
    let mut state = seed;
    let mut acc = splitmix64(&mut state) ^ (domain as u64).wrapping_mul(0xd6e8_feb8_6659_fd93);
    for &c in coords {
        let mut s = acc ^ c.wrapping_mul(0xa076_1d64_78bd_642f);
        acc = splitmix64(&mut s);
    }
    let mut key = [0u8; 32];
    let mut s = acc;
    for chunk in key.chunks_mut(8) {
        chunk.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
    }
    ChaCha20Rng::from_seed(key)
}
