//! Named, independent RNG streams derived from one run seed.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Stream `name` of `seed`: the ChaCha key is SHA-256(seed ‖ name).
pub fn substream(seed: u64, name: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(substream_key(seed, name))
}

pub fn substream_key(seed: u64, name: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    h.finalize().into()
}

/// A derived 64-bit seed, for handing to code that takes `u64`.
pub fn derive_seed(seed: u64, name: &str) -> u64 {
    let k = substream_key(seed, name);
    u64::from_le_bytes(k[..8].try_into().expect("8 bytes"))
}
