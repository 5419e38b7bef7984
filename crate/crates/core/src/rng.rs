//! Deterministic random substreams.
//!
//! Every trial draws from its own ChaCha stream keyed by the master seed and
//! a path of indices (experiment cell, SNR point, block, purpose). Results do
//! not depend on how trials are scheduled across worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream purposes, so channel, data, noise and side-information draws of
/// the same block never share state. Keeping them apart also gives common
/// random numbers across configurations that differ in one stage only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum Purpose {
    Channel = 1,
    Data = 2,
    Noise = 3,
    SideInfo = 4,
    Codebook = 5,
    Training = 6,
    Candidates = 7,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Folds a key path into a 64-bit seed.
pub fn derive_seed(master: u64, path: &[u64]) -> u64 {
    path.iter().fold(splitmix64(master), |acc, &k| {
        splitmix64(acc ^ splitmix64(k))
    })
}

/// Independent generator for `(master, path, purpose)`.
pub fn substream(master: u64, path: &[u64], purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(master, path));
    rng.set_stream(purpose as u64);
    rng
}
