//! Per-block choice of the latent pair.
//!
//! The BS predicts the noiseless received block for every pair,
//! `ŷ = β Ĥ2 T Ĥ1 P b`, and picks the pair closest to the transmitted block
//! in squared Euclidean distance.

use crate::codebook::Codebook;
use crate::design::PrecodingPair;
use crate::error::{Error, Result};
use crate::linalg::{c, ComplexMatrix, ComplexVector};

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionResult {
    /// Zero-based index of the selected pair.
    pub l_opt: usize,
    pub distances: Vec<f64>,
    pub block_id: usize,
}

/// Stacked prediction `[ŷ_1; …; ŷ_M]` for a `K×M` block whose columns are
/// the transmit vectors.
pub fn preestimate_block(
    pair: &PrecodingPair,
    t: &ComplexMatrix,
    h1_hat: &ComplexMatrix,
    h2_hat: &ComplexMatrix,
    block: &ComplexMatrix,
    beta_used: f64,
) -> Result<ComplexVector> {
    if block.ncols() == 0 {
        return Err(Error::InvalidArgument("empty block".into()));
    }
    if pair.p.ncols() != block.nrows()
        || h1_hat.ncols() != pair.p.nrows()
        || t.shape() != (h1_hat.nrows(), h1_hat.nrows())
        || h2_hat.ncols() != t.nrows()
    {
        return Err(Error::ShapeMismatch(
            "pair, codebook entry and channels disagree".into(),
        ));
    }
    let pred = (h2_hat * t * h1_hat * &pair.p * block) * c(beta_used, 0.0);
    Ok(ComplexVector::from_column_slice(pred.as_slice()))
}

/// Picks `argmin_l ‖s − u^(l)‖²`, ties to the lowest index.
///
/// `betas` overrides the scale used for each pair (for instance the quantized
/// values the relay will apply); `None` uses each pair's own `β`. Pairs set
/// to `None` (failed designs) are never selected.
pub fn select_pair(
    pairs: &[Option<PrecodingPair>],
    codebook: &Codebook,
    h1_hat: &ComplexMatrix,
    h2_hat: &ComplexMatrix,
    block: &ComplexMatrix,
    betas: Option<&[f64]>,
    block_id: usize,
) -> Result<SelectionResult> {
    if pairs.is_empty() || codebook.is_empty() {
        return Err(Error::InvalidArgument("empty codebook".into()));
    }
    if pairs.len() != codebook.len() || betas.is_some_and(|b| b.len() != pairs.len()) {
        return Err(Error::ShapeMismatch(format!(
            "{} pairs for {} codebook entries",
            pairs.len(),
            codebook.len()
        )));
    }
    let s = ComplexVector::from_column_slice(block.as_slice());
    let mut distances = Vec::with_capacity(pairs.len());
    for (l, pair) in pairs.iter().enumerate() {
        let d = match pair {
            Some(pair) => {
                let beta = betas.map_or(pair.beta, |b| b[l]);
                let u = preestimate_block(pair, codebook.entry(l), h1_hat, h2_hat, block, beta)?;
                (&s - u).norm_squared()
            }
            None => f64::INFINITY,
        };
        distances.push(d);
    }
    let mut l_opt = 0;
    for (l, &d) in distances.iter().enumerate() {
        if d < distances[l_opt] {
            l_opt = l;
        }
    }
    if !distances[l_opt].is_finite() {
        return Err(Error::NumericalDegeneracy(
            "no usable pair in this block".into(),
        ));
    }
    Ok(SelectionResult {
        l_opt,
        distances,
        block_id,
    })
}
