//! Deterministic, named random streams.
//!
//! Every run owns one ChaCha8 generator per concern (motion, channel,
//! controller, flows). All four are keyed by the run seed and differ only
//! in their stream id, so draws in one concern never shift another.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// The independent random streams used by a single simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    /// Initial placement and preferred speeds.
    Motion = 1,
    /// Shadowing draws in the positioning channel.
    Channel = 2,
    /// Logit sampling in the allocation controller.
    Controller = 3,
    /// External inflows and EF gate selection.
    Flows = 4,
}

pub fn stream(seed: u64, which: Stream) -> StreamRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(which as u64);
    rng
}

/// All streams of one run.
#[derive(Debug, Clone)]
pub struct RngStreams {
    pub motion: StreamRng,
    pub channel: StreamRng,
    pub controller: StreamRng,
    pub flows: StreamRng,
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        RngStreams {
            motion: stream(seed, Stream::Motion),
            channel: stream(seed, Stream::Channel),
            controller: stream(seed, Stream::Controller),
            flows: stream(seed, Stream::Flows),
        }
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for child `index` of `base`. Reproducible, and distinct across indices
/// for a fixed base (splitmix64 is a bijection).
pub fn derive_seed(base: u64, index: u64) -> u64 {
    splitmix64(splitmix64(base) ^ index)
}
