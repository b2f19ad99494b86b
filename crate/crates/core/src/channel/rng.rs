//! Seeded random streams.
//!
//! Every random draw comes from a ChaCha12 generator keyed by the experiment
//! seed. The 64-bit ChaCha stream id is split as `purpose << 48 | index`, so
//! each purpose (channel, pilots, LO, noise, ...) and each trial/sample index
//! gets an independent, reproducible stream that does not depend on how many
//! numbers any other stream consumed.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// Independent substreams derived from one seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Stream {
    Channel = 1,
    Pilots = 2,
    LocalOscillator = 3,
    Noise = 4,
    ParamInit = 5,
    Shuffle = 6,
    SnrDraw = 7,
    SolverInit = 8,
}

const INDEX_BITS: u32 = 48;

pub fn stream_rng(seed: u64, stream: Stream, index: u64) -> ChaCha12Rng {
    assert!(index < (1 << INDEX_BITS), "stream index {index} out of range");
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(((stream as u64) << INDEX_BITS) | index);
    rng
}

/// SplitMix64 finalizer; used to derive per-trial seeds from a base seed.
pub fn mix_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
