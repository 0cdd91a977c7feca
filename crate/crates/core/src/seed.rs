//! Seed derivation for reproducible parallel sampling.
//!
//! Every random stream in the crate is keyed by `(master, domain, index)` so
//! results never depend on how work is split across threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const DOMAIN_DG: u64 = 1;
pub const DOMAIN_HF: u64 = 2;
pub const DOMAIN_REALIZATION: u64 = 3;
pub const DOMAIN_LEFT_DOT: u64 = 4;
pub const DOMAIN_DEVICE: u64 = 5;
pub const DOMAIN_SHOT: u64 = 6;
pub const DOMAIN_POINT: u64 = 7;
pub const DOMAIN_CALIBRATION: u64 = 8;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes a master seed with a domain tag and an index into a child seed.
pub fn derive(master: u64, domain: u64, index: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ domain.wrapping_mul(0xD6E8_FEB8_6659_FD93)) ^ index)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
