//! Seeded random streams.
//!
//! Every run owns one root seed. Consumers draw from named substreams derived
//! from that seed, so adding a new consumer never shifts the draws seen by the
//! existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

/// Named consumers of randomness inside a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Instance,
    Annotator,
    Sampler,
    Posterior,
    Subsample,
    Holdout,
    Replay,
}

impl Stream {
    fn tag(self) -> u64 {
        match self {
            Stream::Instance => 0x1a2b_3c4d,
            Stream::Annotator => 0x2b3c_4d5e,
            Stream::Sampler => 0x3c4d_5e6f,
            Stream::Posterior => 0x4d5e_6f70,
            Stream::Subsample => 0x5e6f_7081,
            Stream::Holdout => 0x6f70_8192,
            Stream::Replay => 0x7081_92a3,
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Derives the substream `stream` of root seed `seed`.
pub fn substream(seed: u64, stream: Stream) -> StreamRng {
    let mixed = splitmix64(splitmix64(seed) ^ stream.tag());
    ChaCha8Rng::seed_from_u64(mixed)
}
