//! Named random substreams derived from one master seed.
//!
//! Every consumer of randomness (sampling, student init, teacher noise,
//! bracket shuffles) draws from its own stream keyed by `(seed, name, index)`.
//! Resuming a run only needs the step index to reconstruct any stream.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

pub const STREAM_SAMPLING: &str = "sampling";
pub const STREAM_INIT: &str = "init";
pub const STREAM_TEACHER: &str = "teacher-noise";
pub const STREAM_BRACKET: &str = "bracket-shuffle";

/// Seed material for the stream `(seed, name, index)`.
pub fn stream_seed(seed: u64, name: &str, index: u64) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    out
}

pub fn substream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(stream_seed(seed, name, index))
}

/// A stream keyed by an arbitrary string, e.g. an image or persona id.
pub fn keyed_stream(seed: u64, name: &str, key: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update((name.len() as u64).to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(out)
}

/// Stable 64-bit value derived from `(seed, name, key)`.
pub fn derive_u64(seed: u64, name: &str, key: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    hasher.update([0u8]);
    hasher.update(key.as_bytes());
    let digest = hasher.finalize();
    let mut buf = [0u8; 8];
    buf.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(buf)
}
