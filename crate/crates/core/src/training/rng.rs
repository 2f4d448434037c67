use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Generator for one named sub-stream of a run seed.
///
/// Streams with different names are independent, so changing how much
/// randomness one component consumes leaves the others untouched.
pub fn named_rng(seed: u64, name: &str) -> ChaCha8Rng {
    let digest = Sha256::digest(name.as_bytes());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(u64::from_le_bytes(digest[..8].try_into().unwrap()));
    rng
}

pub const SAMPLER: &str = "sampler";
pub const AUGMENT: &str = "augment";
pub const INIT: &str = "init";
