//! Replicate-indexed random streams.
//!
//! The ChaCha key is `seed ‖ domain ‖ tag ‖ 0` and the stream id is the
//! replicate index, so `(seed, domain, tag, replicate)` maps injectively to
//! an independent stream and results never depend on scheduling.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Which experiment family a stream belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Domain {
    Coalescent = 1,
    Drifted = 2,
    Coupled = 3,
    Paired = 4,
    Deviation = 5,
    SelfTest = 6,
}

pub fn stream(seed: u64, domain: Domain, tag: u64, replicate: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&(domain as u64).to_le_bytes());
    key[16..24].copy_from_slice(&tag.to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(replicate);
    rng
}

/// `f64` carrying a tag (such as a level `z`) into a stream key.
pub fn tag_f64(x: f64) -> u64 {
    x.to_bits()
}
