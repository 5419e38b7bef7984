//! Gray-mapped QPSK with unit symbol energy.

use num_complex::Complex64;

use crate::error::{invalid, Result};

/// Modulation order handled by the link.
pub const QPSK_ORDER: usize = 4;

const A: f64 = std::f64::consts::FRAC_1_SQRT_2;

/// Maps the bit pair `(b0, b1)` to `((1 − 2b0) + j(1 − 2b1)) / √2`.
pub fn qpsk_symbol(b0: u8, b1: u8) -> Complex64 {
    Complex64::new(if b0 == 0 { A } else { -A }, if b1 == 0 { A } else { -A })
}

/// Symbol for the 2-bit label `idx = 2·b0 + b1`.
pub fn qpsk_from_index(idx: usize) -> Complex64 {
    qpsk_symbol(((idx >> 1) & 1) as u8, (idx & 1) as u8)
}

/// Quadrant decision, returned as the 2-bit label.
pub fn qpsk_decide(y: Complex64) -> usize {
    let b0 = usize::from(y.re < 0.0);
    let b1 = usize::from(y.im < 0.0);
    (b0 << 1) | b1
}

pub fn qpsk_mod(bits: &[u8]) -> Result<Vec<Complex64>> {
    if !bits.len().is_multiple_of(2) {
        return invalid(format!(
            "QPSK needs an even number of bits, got {}",
            bits.len()
        ));
    }
    Ok(bits
        .chunks_exact(2)
        .map(|p| qpsk_symbol(p[0], p[1]))
        .collect())
}

/// Minimum-distance demodulation of each received sample.
pub fn qpsk_demod(y: &[Complex64]) -> Vec<u8> {
    y.iter()
        .flat_map(|&s| {
            let l = qpsk_decide(s);
            [((l >> 1) & 1) as u8, (l & 1) as u8]
        })
        .collect()
}
