//! Deterministic, splittable random number streams.
//!
//! Every sampler in this crate is a pure function of its parameters and an
//! [`RngStream`]. Streams are backed by a counter-based generator (ChaCha8),
//! so a `(seed, stream_id, draw index)` triple always reproduces the same
//! value regardless of what other streams have done — per-document and
//! per-chain streams stay reproducible under any scheduling.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// splitmix64 finalizer; used to decorrelate derived stream ids.
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// A seeded, splittable random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    rng: ChaCha8Rng,
}

/// Serializable snapshot of a stream: seed, stream id, and word position.
/// `RngStream::restore(snapshot)` resumes the stream bit-exactly.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RngSnapshot {
    pub seed: u64,
    pub stream_id: u64,
    pub word_pos: u128,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::with_stream(seed, 0)
    }

    pub fn with_stream(seed: u64, stream_id: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream_id);
        RngStream {
            seed,
            stream_id,
            rng,
        }
    }

    /// Derive an independent child stream. Children with distinct salts are
    /// statistically independent; the parent's draw position is unaffected.
    pub fn derive(&self, salt: u64) -> RngStream {
        Self::with_stream(self.seed, mix64(self.stream_id ^ mix64(salt.wrapping_add(1))))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn snapshot(&self) -> RngSnapshot {
        RngSnapshot {
            seed: self.seed,
            stream_id: self.stream_id,
            word_pos: self.rng.get_word_pos(),
        }
    }

    pub fn restore(snap: &RngSnapshot) -> RngStream {
        let mut s = Self::with_stream(snap.seed, snap.stream_id);
        s.rng.set_word_pos(snap.word_pos);
        s
    }

    /// Uniform draw in the open interval (0, 1); never returns 0 or 1.
    pub fn uniform(&mut self) -> f64 {
        loop {
            // 53-bit mantissa uniform in [0, 1)
            let u = (self.rng.next_u64() >> 11) as f64 * (1.0 / 9007199254740992.0);
            if u > 0.0 {
                return u;
            }
        }
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        // rejection to kill modulo bias
        let n = n as u64;
        let zone = u64::MAX - (u64::MAX % n);
        loop {
            let v = self.rng.next_u64();
            if v < zone {
                return (v % n) as usize;
            }
        }
    }

    /// Bernoulli(p) draw.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dest: &mut [u8]) {
        self.rng.fill_bytes(dest)
    }
}
