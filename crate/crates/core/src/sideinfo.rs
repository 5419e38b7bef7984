//! The feedforward signalling link: `B` index bits followed by `C` scale bits,
//! each big-endian, over a binary symmetric channel.

use rand::Rng;

use crate::error::{invalid, Result};

/// Big-endian bits of `value` in a field of `width` bits.
pub fn to_bits(value: usize, width: u32) -> Vec<u8> {
    (0..width).rev().map(|i| ((value >> i) & 1) as u8).collect()
}

pub fn from_bits(bits: &[u8]) -> usize {
    bits.iter().fold(0, |acc, &b| (acc << 1) | b as usize)
}

/// Frame layout `[index bits | scale bits]`.
pub fn encode_frame(index: usize, index_bits: u32, beta_index: usize, beta_bits: u32) -> Vec<u8> {
    let mut f = to_bits(index, index_bits);
    f.extend(to_bits(beta_index, beta_bits));
    f
}

/// Flips each bit independently with probability `pe`.
///
/// One uniform is drawn per bit and compared against `pe`, so runs with the
/// same stream and a larger `pe` flip a superset of the bits.
pub fn bsc<R: Rng + ?Sized>(bits: &[u8], pe: f64, rng: &mut R) -> Result<Vec<u8>> {
    if !(0.0..=1.0).contains(&pe) {
        return invalid(format!("crossover probability {pe} outside [0, 1]"));
    }
    Ok(bits
        .iter()
        .map(|&b| {
            let u: f64 = rng.random();
            if u < pe {
                b ^ 1
            } else {
                b
            }
        })
        .collect())
}

/// What the relay decodes from one frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReceivedSideInfo {
    /// Zero-based codebook index.
    pub index: usize,
    /// Index into the scale quantizer levels.
    pub beta_index: usize,
    pub all_correct: bool,
}

/// Sends one frame over the BSC and decodes it.
pub fn sideinfo_channel<R: Rng + ?Sized>(
    index: usize,
    index_bits: u32,
    beta_index: usize,
    beta_bits: u32,
    pe: f64,
    rng: &mut R,
) -> Result<ReceivedSideInfo> {
    let frame = encode_frame(index, index_bits, beta_index, beta_bits);
    let rx = bsc(&frame, pe, rng)?;
    let split = index_bits as usize;
    Ok(ReceivedSideInfo {
        index: from_bits(&rx[..split]),
        beta_index: from_bits(&rx[split..]),
        all_correct: rx == frame,
    })
}
