//! Deterministic seed derivation.
//!
//! Every independently trained or generated unit (a class pair, a record, a
//! tree node) draws from its own ChaCha stream whose seed is a pure function
//! of the master seed and the unit's coordinates. Work can then run in any
//! order, or in parallel, without changing results.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream families. Keeps e.g. pair (1, 2) and record (1, 2) apart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Pair = 1,
    OneVsAll = 2,
    Record = 3,
    ClassPhase = 4,
    Split = 5,
    Holdout = 6,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `(master, stream, a, b)` into a 64-bit seed.
pub fn derive_seed(master: u64, stream: Stream, a: u64, b: u64) -> u64 {
    let mut h = splitmix64(master);
    h = splitmix64(h ^ stream as u64);
    h = splitmix64(h ^ a);
    splitmix64(h ^ b.rotate_left(32))
}

pub fn stream_rng(master: u64, stream: Stream, a: u64, b: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, stream, a, b))
}
