//! Monte-Carlo symbol-error-rate simulation of the switched relay link.
//!
//! Per block: draw a channel set, design every latent pair on the estimates,
//! select a pair for the block's symbols, send the index and the quantized
//! scale over the side channel, and push the block through the *true*
//! channels with fresh noise. Each block of each SNR point has its own random
//! streams, so curves are bit-identical for any worker count.

use std::sync::Arc;

use log::debug;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_channel_set, ChannelSet, Dims, ErrorStats};
use crate::codebook::Codebook;
use crate::design::{
    default_initial_precoder, design_pair, DesignInput, DesignParams, PrecodingPair,
};
use crate::error::{invalid, Error, Result};
use crate::linalg::{c, gaussian_matrix, ComplexMatrix};
use crate::modulation::{qpsk_decide, qpsk_from_index};
use crate::quantizer::{train_beta_quantizer, BetaQuantizer};
use crate::rng::{substream, Purpose};
use crate::selection::select_pair;
use crate::sideinfo::sideinfo_channel;

/// Which scale the BS assumes when predicting the received block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaMode {
    /// The quantized level the relay will actually apply.
    #[default]
    Quantized,
    /// The designed, unquantized scale.
    Exact,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub dims: Dims,
    /// Scale quantizer bits `C`; 0 forwards the exact scale.
    pub beta_bits: u32,
    /// Symbol vectors per block `M`.
    pub block_len: usize,
    pub snr_db: Vec<f64>,
    pub sigma_e_sq: f64,
    pub theta: f64,
    pub rho: f64,
    /// Apply `rho` to the second-hop receive covariance as well.
    pub rho_on_sigma2: bool,
    pub pt: f64,
    pub pr: f64,
    /// Side-channel crossover probability.
    pub pe_sideinfo: f64,
    pub n_blocks: usize,
    pub master_seed: u64,
    pub beta_mode: BetaMode,
    pub eps: f64,
    pub max_iter: usize,
    /// Channel draws used to train the scale quantizer at each SNR point.
    pub quantizer_training_draws: usize,
    /// Worker threads; 0 uses the ambient rayon pool.
    pub workers: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dims: Dims::square(6),
            beta_bits: 6,
            block_len: 10,
            snr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            sigma_e_sq: 0.002,
            theta: 0.0,
            rho: 0.0,
            rho_on_sigma2: false,
            pt: 6.0,
            pr: 6.0,
            pe_sideinfo: 0.0,
            n_blocks: 10_000,
            master_seed: 1,
            beta_mode: BetaMode::Quantized,
            eps: 1e-4,
            max_iter: 200,
            quantizer_training_draws: 1000,
            workers: 0,
        }
    }
}

impl SimConfig {
    /// Defaults with `P_t = P_r = K` for the given dimensions.
    pub fn for_dims(dims: Dims) -> Self {
        SimConfig {
            dims,
            pt: dims.k as f64,
            pr: dims.k as f64,
            ..SimConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.block_len == 0 {
            return invalid("block length must be at least 1");
        }
        if self.snr_db.iter().any(|s| !s.is_finite()) {
            return invalid("SNR points must be finite");
        }
        if !(0.0..=0.5).contains(&self.pe_sideinfo) {
            return invalid(format!(
                "side-channel Pe {} outside [0, 0.5]",
                self.pe_sideinfo
            ));
        }
        if self.beta_bits > 16 {
            return invalid("at most 16 scale bits");
        }
        if self.beta_bits > 0 && self.quantizer_training_draws == 0 {
            return invalid("quantizer needs training draws");
        }
        Ok(())
    }

    pub fn design_params(&self) -> DesignParams {
        DesignParams {
            pt: self.pt,
            pr: self.pr,
            eps: self.eps,
            max_iter: self.max_iter,
        }
    }

    pub fn error_stats(&self) -> Result<ErrorStats> {
        ErrorStats::exponential(
            self.dims,
            self.sigma_e_sq,
            self.theta,
            self.rho,
            self.rho_on_sigma2,
        )
    }

    /// `σ1² = σ2² = P_t / SNR`.
    pub fn noise_variance(&self, snr_db: f64) -> f64 {
        self.pt / 10f64.powf(snr_db / 10.0)
    }
}

/// Block-level settings derived from the configuration and codebook.
#[derive(Debug, Clone, Copy)]
pub struct BlockParams {
    pub block_len: usize,
    pub beta_mode: BetaMode,
    pub pe: f64,
    pub index_bits: u32,
    pub beta_bits: u32,
    pub block_id: usize,
}

/// Independent streams for one block.
pub struct BlockStreams {
    pub data: ChaCha8Rng,
    pub noise: ChaCha8Rng,
    pub side: ChaCha8Rng,
}

impl BlockStreams {
    pub fn new(master: u64, path: &[u64]) -> Self {
        BlockStreams {
            data: substream(master, path, Purpose::Data),
            noise: substream(master, path, Purpose::Noise),
            side: substream(master, path, Purpose::SideInfo),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct BlockOutcome {
    pub errors: u64,
    pub symbols: u64,
    pub selected: usize,
    pub relay_index: usize,
    pub sideinfo_ok: bool,
    /// `Σ ‖x_R‖²` over the block's symbol periods.
    pub relay_energy: f64,
    pub noise1_energy: f64,
    pub noise2_energy: f64,
}

/// Designs every latent pair for one channel set, from the default start.
pub fn design_all_pairs(
    cs: &ChannelSet,
    codebook: &Codebook,
    params: DesignParams,
) -> Vec<Result<PrecodingPair>> {
    let d = cs.dims();
    let p0 = default_initial_precoder(d.nt, d.k);
    codebook
        .entries()
        .iter()
        .enumerate()
        .map(|(l, t)| design_pair(&DesignInput::from_channels(cs, t, params), &p0, l))
        .collect()
}

/// Draws a `K×M` QPSK block; returns the symbols and their 2-bit labels.
pub fn draw_block<R: Rng + ?Sized>(k: usize, m: usize, rng: &mut R) -> (ComplexMatrix, Vec<usize>) {
    let labels: Vec<usize> = (0..k * m).map(|_| rng.random_range(0..4)).collect();
    // column-major: label index = col * k + row
    let block = ComplexMatrix::from_fn(k, m, |i, j| qpsk_from_index(labels[j * k + i]));
    (block, labels)
}

/// Simulates one block over the true channels of `cs`.
pub fn simulate_block(
    cs: &ChannelSet,
    codebook: &Codebook,
    pairs: &[Option<PrecodingPair>],
    params: &BlockParams,
    quantizer: Option<&BetaQuantizer>,
    streams: &mut BlockStreams,
) -> Result<BlockOutcome> {
    let d = cs.dims();
    let (block, labels) = draw_block(d.k, params.block_len, &mut streams.data);

    let tx_beta = |pair: &PrecodingPair| -> (usize, f64) {
        match quantizer {
            Some(q) => q.quantize(pair.beta),
            None => (0, pair.beta),
        }
    };
    let betas: Vec<f64> = pairs
        .iter()
        .map(|p| match (p, params.beta_mode) {
            (Some(p), BetaMode::Quantized) => tx_beta(p).1,
            (Some(p), BetaMode::Exact) => p.beta,
            (None, _) => 0.0,
        })
        .collect();
    let sel = select_pair(
        pairs,
        codebook,
        &cs.h1_hat,
        &cs.h2_hat,
        &block,
        Some(&betas),
        params.block_id,
    )?;
    let pair = pairs[sel.l_opt].as_ref().expect("selected pair exists");
    let (beta_idx, beta_tx) = tx_beta(pair);
    let beta_bits = if quantizer.is_some() {
        params.beta_bits
    } else {
        0
    };
    let side = sideinfo_channel(
        sel.l_opt,
        params.index_bits,
        beta_idx,
        beta_bits,
        params.pe,
        &mut streams.side,
    )?;
    let relay_beta = match quantizer {
        Some(q) => q.value(side.beta_index),
        None => beta_tx,
    };
    let relay_index = side.index.min(codebook.len() - 1);
    let w = codebook.entry(relay_index) * c(relay_beta, 0.0);

    let s1 = cs.sigma1_sq.sqrt();
    let s2 = cs.sigma2_sq.sqrt();
    let n1 = gaussian_matrix(d.nr, params.block_len, &mut streams.noise) * c(s1, 0.0);
    let n2 = gaussian_matrix(d.k, params.block_len, &mut streams.noise) * c(s2, 0.0);
    let x_r = &w * (&cs.h1 * &pair.p * &block + &n1);
    let y = &cs.h2 * &x_r + &n2;

    let mut errors = 0;
    for j in 0..params.block_len {
        for i in 0..d.k {
            if qpsk_decide(y[(i, j)]) != labels[j * d.k + i] {
                errors += 1;
            }
        }
    }
    Ok(BlockOutcome {
        errors,
        symbols: (d.k * params.block_len) as u64,
        selected: sel.l_opt,
        relay_index,
        sideinfo_ok: side.all_correct,
        relay_energy: x_r.norm_squared(),
        noise1_energy: n1.norm_squared(),
        noise2_energy: n2.norm_squared(),
    })
}

/// Aggregated results of one SNR point.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SerPoint {
    pub snr_db: f64,
    pub errors: u64,
    pub symbols: u64,
    pub blocks: u64,
    /// Latent pairs that failed or did not converge.
    pub design_failures: u64,
    pub designs: u64,
    pub sideinfo_frame_errors: u64,
    pub relay_energy: f64,
    pub noise1_energy: f64,
    pub noise2_energy: f64,
}

impl SerPoint {
    pub fn ser(&self) -> f64 {
        if self.symbols == 0 {
            0.0
        } else {
            self.errors as f64 / self.symbols as f64
        }
    }

    /// 95% normal-approximation half-width of the SER estimate.
    pub fn half_width(&self) -> f64 {
        if self.symbols == 0 {
            return 0.0;
        }
        let p = self.ser();
        1.96 * (p * (1.0 - p) / self.symbols as f64).sqrt()
    }

    fn absorb(&mut self, b: &BlockOutcome) {
        self.errors += b.errors;
        self.symbols += b.symbols;
        self.blocks += 1;
        self.sideinfo_frame_errors += u64::from(!b.sideinfo_ok);
        self.relay_energy += b.relay_energy;
        self.noise1_energy += b.noise1_energy;
        self.noise2_energy += b.noise2_energy;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerCurve {
    pub points: Vec<SerPoint>,
    /// Scale quantizer used at each SNR point (absent when `C = 0`).
    pub quantizers: Vec<Option<BetaQuantizer>>,
    pub master_seed: u64,
    pub codebook_bits: u32,
}

/// Trains the scale quantizer for one SNR point from designs on independent
/// channel draws, rotating through the codebook entries.
pub fn train_quantizer_for_point(
    cfg: &SimConfig,
    codebook: &Codebook,
    stats: &Arc<ErrorStats>,
    snr_index: usize,
) -> Result<Option<BetaQuantizer>> {
    if cfg.beta_bits == 0 {
        return Ok(None);
    }
    let noise = cfg.noise_variance(cfg.snr_db[snr_index]);
    let params = cfg.design_params();
    let p0 = default_initial_precoder(cfg.dims.nt, cfg.dims.k);
    let betas: Vec<f64> = (0..cfg.quantizer_training_draws)
        .into_par_iter()
        .map(|draw| -> Result<Option<f64>> {
            let mut rng = substream(
                cfg.master_seed,
                &[snr_index as u64, draw as u64],
                Purpose::Training,
            );
            let cs = draw_channel_set(cfg.dims, stats, (noise, noise), &mut rng)?;
            let t = codebook.entry(draw % codebook.len());
            Ok(
                design_pair(&DesignInput::from_channels(&cs, t, params), &p0, 0)
                    .ok()
                    .map(|p| p.beta),
            )
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    train_beta_quantizer(cfg.beta_bits, &betas).map(Some)
}

fn run_point(
    cfg: &SimConfig,
    codebook: &Codebook,
    stats: &Arc<ErrorStats>,
    snr_index: usize,
    quantizer: Option<&BetaQuantizer>,
) -> Result<SerPoint> {
    let snr_db = cfg.snr_db[snr_index];
    let noise = cfg.noise_variance(snr_db);
    let params = cfg.design_params();
    let outcomes: Vec<(Option<BlockOutcome>, u64)> = (0..cfg.n_blocks)
        .into_par_iter()
        .map(|b| -> Result<(Option<BlockOutcome>, u64)> {
            let path = [snr_index as u64, b as u64];
            let mut ch_rng = substream(cfg.master_seed, &path, Purpose::Channel);
            let cs = draw_channel_set(cfg.dims, stats, (noise, noise), &mut ch_rng)?;
            let pairs: Vec<Option<PrecodingPair>> = design_all_pairs(&cs, codebook, params)
                .into_iter()
                .map(|r| r.map_err(|e| debug!("block {b}: design failed: {e}")).ok())
                .collect();
            let failures = pairs
                .iter()
                .filter(|p| !p.as_ref().is_some_and(|p| p.converged))
                .count() as u64;
            if pairs.iter().all(Option::is_none) {
                return Ok((None, failures));
            }
            let bp = BlockParams {
                block_len: cfg.block_len,
                beta_mode: cfg.beta_mode,
                pe: cfg.pe_sideinfo,
                index_bits: codebook.bits(),
                beta_bits: cfg.beta_bits,
                block_id: b,
            };
            let mut streams = BlockStreams::new(cfg.master_seed, &path);
            let out = simulate_block(&cs, codebook, &pairs, &bp, quantizer, &mut streams)?;
            Ok((Some(out), failures))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut point = SerPoint {
        snr_db,
        ..SerPoint::default()
    };
    for (out, failures) in &outcomes {
        point.design_failures += failures;
        point.designs += codebook.len() as u64;
        if let Some(out) = out {
            point.absorb(out);
        }
    }
    Ok(point)
}

fn run_all(cfg: &SimConfig, codebook: &Codebook) -> Result<SerCurve> {
    let stats = Arc::new(cfg.error_stats()?);
    let mut points = Vec::with_capacity(cfg.snr_db.len());
    let mut quantizers = Vec::with_capacity(cfg.snr_db.len());
    for si in 0..cfg.snr_db.len() {
        let q = train_quantizer_for_point(cfg, codebook, &stats, si)?;
        points.push(run_point(cfg, codebook, &stats, si, q.as_ref())?);
        quantizers.push(q);
    }
    Ok(SerCurve {
        points,
        quantizers,
        master_seed: cfg.master_seed,
        codebook_bits: codebook.bits(),
    })
}

/// Runs every SNR point of `cfg` with `codebook`.
pub fn run_ser_experiment(cfg: &SimConfig, codebook: &Codebook) -> Result<SerCurve> {
    cfg.validate()?;
    if codebook.nr() != cfg.dims.nr {
        return invalid(format!(
            "codebook entries are {}x{}, relay has {} antennas",
            codebook.nr(),
            codebook.nr(),
            cfg.dims.nr
        ));
    }
    if cfg.workers == 0 {
        return run_all(cfg, codebook);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    pool.install(|| run_all(cfg, codebook))
}

/// Dimensions helper for callers that only care about square systems.
pub fn square_config(n: usize) -> SimConfig {
    SimConfig::for_dims(Dims::square(n))
}
