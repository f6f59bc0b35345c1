//! Named, independently derived random streams.
//!
//! Every source of randomness in an execution is a separate stream derived
//! from the master seed and a stream name. Changing how one component draws
//! randomness cannot perturb the draws seen by any other component, which is
//! what makes the byte-level determinism contract testable.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives an independent RNG stream from a master seed and a stream name.
pub fn substream(master_seed: u64, name: &str) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(master_seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    let mut seed = [0u8; 32];
    seed.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(seed)
}

/// Stream name for the meta-episode-indexed component streams.
pub fn indexed(name: &str, index: usize) -> String {
    format!("{name}/{index}")
}
