//! Closed-form performance figures: per-user SINR, a total-probability SER
//! estimate, the side-channel bit-error model, downlink efficiency and
//! leading-order FLOP counts.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::channel::{draw_channel_set, Dims};
use crate::codebook::Codebook;
use crate::error::{invalid, Error, Result};
use crate::linalg::ComplexMatrix;
use crate::link_sim::{design_all_pairs, draw_block, SimConfig};
use crate::rng::{substream, Purpose};
use crate::selection::select_pair;

/// FLOPs charged per complex multiply-accumulate (6 for the product, 2 for
/// the sum).
pub const FLOPS_PER_CMAC: f64 = 8.0;

/// Row convention for the interference terms of the SINR.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SinrForm {
    /// Interference seen at user `k`: `|H̄(k,:) P(:,k')|²`.
    #[default]
    Corrected,
    /// Interference indexed by row `k'`: `|H̄(k',:) P(:,k')|²`.
    RowKPrime,
}

#[derive(Debug, Clone)]
pub struct AnalysisInput {
    pub p: ComplexMatrix,
    pub beta: f64,
    pub l_opt: usize,
    /// `H̄ = H2 T H1`.
    pub h_bar: ComplexMatrix,
    pub h2: ComplexMatrix,
    pub sigma1_sq: f64,
    pub sigma2_sq: f64,
    /// Index bits `B`.
    pub bits: u32,
    /// Scale bits `C`.
    pub beta_bits: u32,
    /// Mean per-bit SNR of the signalling link.
    pub gamma: f64,
}

impl AnalysisInput {
    pub fn validate(&self) -> Result<()> {
        let k = self.p.ncols();
        if k == 0 || self.h_bar.shape() != (k, self.p.nrows()) || self.h2.nrows() != k {
            return Err(Error::ShapeMismatch(format!(
                "H̄ {:?}, P {:?}, H2 {:?}",
                self.h_bar.shape(),
                self.p.shape(),
                self.h2.shape()
            )));
        }
        if !(self.gamma >= 0.0) || self.sigma1_sq < 0.0 || self.sigma2_sq < 0.0 {
            return invalid("Γ and noise variances must be non-negative");
        }
        Ok(())
    }

    pub fn users(&self) -> usize {
        self.p.ncols()
    }

    /// Side-information bits per block, `B + C`.
    pub fn frame_bits(&self) -> u32 {
        self.bits + self.beta_bits
    }
}

/// SINR of user `k` (zero-based) under the chosen row convention.
pub fn sinr_per_user(input: &AnalysisInput, k: usize, form: SinrForm) -> Result<f64> {
    input.validate()?;
    let users = input.users();
    if k >= users {
        return invalid(format!("user {k} out of range for K = {users}"));
    }
    let b2 = input.beta * input.beta;
    let gain = |row: usize, col: usize| -> f64 {
        let v: num_complex::Complex64 = (0..input.p.nrows())
            .map(|n| input.h_bar[(row, n)] * input.p[(n, col)])
            .sum();
        v.norm_sqr()
    };
    let signal = b2 * gain(k, k);
    let interference: f64 = (0..users)
        .filter(|&kp| kp != k)
        .map(|kp| match form {
            SinrForm::Corrected => b2 * gain(k, kp),
            SinrForm::RowKPrime => b2 * gain(kp, kp),
        })
        .sum();
    let relay_noise = b2 * input.sigma1_sq * input.h2.row(k).norm_squared();
    let denom = interference + relay_noise + input.sigma2_sq;
    if denom <= 0.0 {
        return Ok(if signal > 0.0 { f64::INFINITY } else { 0.0 });
    }
    Ok(signal / denom)
}

/// Gaussian tail `Q(x) = erfc(x/√2)/2`.
pub fn q_function(x: f64) -> f64 {
    0.5 * erfc(x / std::f64::consts::SQRT_2)
}

/// Bit error of BPSK over slow flat Rayleigh fading with mean bit SNR `Γ`.
pub fn sideinfo_bit_error(gamma: f64) -> f64 {
    if gamma.is_infinite() {
        return 0.0;
    }
    0.5 * (1.0 - (gamma / (1.0 + gamma)).sqrt())
}

/// Probability that all `bits` side-information bits arrive intact.
pub fn prob_perfect_sideinfo(pb: f64, bits: u32) -> f64 {
    (1.0 - pb).powi(bits as i32)
}

/// Average SER over users: each user errs with `Q(√γ_k)` when the side
/// information is intact and with probability 1/2 otherwise. The frame is
/// `B + C` bits long.
pub fn ser_estimate(input: &AnalysisInput, pb: f64, form: SinrForm) -> Result<f64> {
    if !(0.0..=1.0).contains(&pb) {
        return invalid(format!("bit error {pb} outside [0, 1]"));
    }
    let p_ok = prob_perfect_sideinfo(pb, input.frame_bits());
    let mut total = 0.0;
    for k in 0..input.users() {
        let g = sinr_per_user(input, k, form)?;
        total += 0.5 * (1.0 - p_ok) + q_function(g.sqrt()) * p_ok;
    }
    Ok(total / input.users() as f64)
}

/// Fraction of downlink bits carrying payload.
pub fn efficiency(
    k: usize,
    m_block: usize,
    order: usize,
    bits: u32,
    beta_bits: u32,
) -> Result<f64> {
    if k == 0 || m_block == 0 || order < 2 {
        return invalid("K and M must be positive and the constellation at least binary");
    }
    let payload = (k * m_block) as f64 * (order as f64).log2();
    Ok(payload / (payload + f64::from(bits) + f64::from(beta_bits)))
}

/// Rows of the complexity table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlopTag {
    PrecoderEq9,
    BetaEq10,
    Selection,
    RobustRelayRef10,
}

impl FlopTag {
    pub const ALL: [FlopTag; 4] = [
        FlopTag::PrecoderEq9,
        FlopTag::BetaEq10,
        FlopTag::Selection,
        FlopTag::RobustRelayRef10,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FlopTag::PrecoderEq9 => "precoder_eq9",
            FlopTag::BetaEq10 => "beta_eq10",
            FlopTag::Selection => "selection",
            FlopTag::RobustRelayRef10 => "robust_relay_ref10",
        }
    }
}

impl fmt::Display for FlopTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FlopTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FlopTag::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown algorithm tag `{s}`")))
    }
}

/// Leading-order FLOP count of one complexity-table row.
///
/// Per-iteration rows scale with `iterations`, the selection row with `M`.
/// The codebook size enters through [`sr_overall_flops`].
pub fn flop_estimate(tag: FlopTag, dims: Dims, m_block: usize, iterations: usize) -> f64 {
    let (nt, nr, k) = (dims.nt as f64, dims.nr as f64, dims.k as f64);
    let m = m_block as f64;
    let it = iterations as f64;
    let cmacs = match tag {
        FlopTag::PrecoderEq9 => {
            it * (nt.powi(3)
                + (nr + k) * nt * nt
                + (nt + k) * nr * nr
                + k * k
                + nr * nt * k
                + k * nt * nt
                + nt * k)
        }
        FlopTag::BetaEq10 => it * (nr.powi(3) + k * nr * nr + nr * k * k + nt * k * k),
        FlopTag::Selection => ((k + nr) * nt + nr * nr + k * nr + k) * m + k * m,
        FlopTag::RobustRelayRef10 => nr.powi(3) + k * nr * nr + nr * nr + nr,
    };
    FLOPS_PER_CMAC * cmacs
}

/// Design cost of `2^B` pairs plus one selection pass.
pub fn sr_overall_flops(dims: Dims, m_block: usize, iterations: usize, bits: u32) -> f64 {
    sr_design_flops(dims, iterations, bits) + flop_estimate(FlopTag::Selection, dims, m_block, 0)
}

pub fn sr_design_flops(dims: Dims, iterations: usize, bits: u32) -> f64 {
    let per_pair = flop_estimate(FlopTag::PrecoderEq9, dims, 0, iterations)
        + flop_estimate(FlopTag::BetaEq10, dims, 0, iterations);
    2f64.powi(bits as i32) * per_pair
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticPoint {
    pub snr_db: f64,
    /// Mean of the per-draw estimates.
    pub ser: f64,
    pub p_perfect: f64,
    pub draws: usize,
}

/// Averages [`ser_estimate`] over `draws` channel realizations per SNR point.
///
/// Each draw designs all pairs, selects one for a random block, and
/// evaluates the SINR on the true channels with the exact scale.
pub fn analytic_curve(
    cfg: &SimConfig,
    codebook: &Codebook,
    pb: f64,
    draws: usize,
    form: SinrForm,
) -> Result<Vec<AnalyticPoint>> {
    cfg.validate()?;
    if draws == 0 {
        return invalid("at least one draw per point");
    }
    let stats = Arc::new(cfg.error_stats()?);
    let params = cfg.design_params();
    let mut out = Vec::with_capacity(cfg.snr_db.len());
    for (si, &snr_db) in cfg.snr_db.iter().enumerate() {
        let noise = cfg.noise_variance(snr_db);
        let estimates: Vec<Option<f64>> = (0..draws)
            .into_par_iter()
            .map(|d| -> Result<Option<f64>> {
                let path = [si as u64, d as u64];
                let mut ch = substream(cfg.master_seed, &path, Purpose::Channel);
                let cs = draw_channel_set(cfg.dims, &stats, (noise, noise), &mut ch)?;
                let pairs: Vec<_> = design_all_pairs(&cs, codebook, params)
                    .into_iter()
                    .map(Result::ok)
                    .collect();
                if pairs.iter().all(Option::is_none) {
                    return Ok(None);
                }
                let mut data = substream(cfg.master_seed, &path, Purpose::Data);
                let (block, _) = draw_block(cfg.dims.k, cfg.block_len, &mut data);
                let sel = select_pair(&pairs, codebook, &cs.h1_hat, &cs.h2_hat, &block, None, d)?;
                let pair = pairs[sel.l_opt].as_ref().expect("selected pair exists");
                let input = AnalysisInput {
                    p: pair.p.clone(),
                    beta: pair.beta,
                    l_opt: sel.l_opt,
                    h_bar: &cs.h2 * codebook.entry(sel.l_opt) * &cs.h1,
                    h2: cs.h2.clone(),
                    sigma1_sq: cs.sigma1_sq,
                    sigma2_sq: cs.sigma2_sq,
                    bits: codebook.bits(),
                    beta_bits: cfg.beta_bits,
                    gamma: 0.0,
                };
                ser_estimate(&input, pb, form).map(Some)
            })
            .collect::<Result<_>>()?;
        let good: Vec<f64> = estimates.into_iter().flatten().collect();
        let ser = if good.is_empty() {
            f64::NAN
        } else {
            good.iter().sum::<f64>() / good.len() as f64
        };
        out.push(AnalyticPoint {
            snr_db,
            ser,
            p_perfect: prob_perfect_sideinfo(pb, codebook.bits() + cfg.beta_bits),
            draws: good.len(),
        });
    }
    Ok(out)
}
