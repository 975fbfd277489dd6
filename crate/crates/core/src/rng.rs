//! Seeded random sub-streams.
//!
//! Every random draw in the pipeline derives from one root seed plus a list
//! of tags naming the consumer (stage, purpose, ids). Two consumers with
//! different tag lists get statistically independent streams, and the same
//! tag list always reproduces the same stream, so adding a new consumer
//! never perturbs existing ones.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x100_0000_01b3;

/// 64-bit FNV-1a. Stable across platforms, runs, and toolchains, unlike
/// `std::hash`, which is randomized per process.
pub fn stable_hash(bytes: &[u8]) -> u64 {
    fold(FNV_OFFSET, bytes)
}

fn fold(mut state: u64, bytes: &[u8]) -> u64 {
    for &b in bytes {
        state ^= u64::from(b);
        state = state.wrapping_mul(FNV_PRIME);
    }
    state
}

/// Builder for a named sub-stream key. String and numeric tags are folded
/// with distinct type prefixes so `with_num(1)` and `with_str("1")` differ.
#[derive(Debug, Clone, Copy)]
pub struct StreamKey {
    state: u64,
}

impl StreamKey {
    pub fn new(root_seed: u64) -> Self {
        StreamKey {
            state: fold(FNV_OFFSET, &root_seed.to_le_bytes()),
        }
    }

    pub fn with_str(mut self, tag: &str) -> Self {
        self.state = fold(self.state, &[0x01]);
        self.state = fold(self.state, tag.as_bytes());
        self
    }

    pub fn with_num(mut self, tag: u64) -> Self {
        self.state = fold(self.state, &[0x02]);
        self.state = fold(self.state, &tag.to_le_bytes());
        self
    }

    /// Collapse the key to a 64-bit seed (for handing to APIs that take one).
    pub fn seed(self) -> u64 {
        self.state
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.state)
    }
}
