//! Unitary codebooks shared by the BS and the relay.
//!
//! Three constructions: Haar-random entries, the single identity entry (which
//! turns switched relaying into plain amplify-and-forward), and the
//! most-frequently-selected-candidates (MSC) design, which runs the full
//! design-and-select loop offline over a random candidate pool and keeps the
//! candidates that win most often.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use log::{debug, warn};
use nalgebra::Dyn;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{draw_channel_set, Dims, ErrorStats};
use crate::design::{default_initial_precoder, design_pair, DesignInput, DesignParams};
use crate::error::{invalid, Error, Result};
use crate::linalg::{
    c, frobenius_sq, gaussian_matrix, identity, unitarity_residual, ComplexMatrix,
};
use crate::modulation::{qpsk_from_index, QPSK_ORDER};
use crate::rng::{substream, Purpose};

/// Unitarity tolerance for generated entries.
pub const UNITARY_TOL: f64 = 1e-10;
/// Looser tolerance applied after parsing a file.
pub const LOAD_UNITARY_TOL: f64 = 1e-8;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodebookMethod {
    Random,
    Msc,
    Identity,
}

impl fmt::Display for CodebookMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CodebookMethod::Random => "random",
            CodebookMethod::Msc => "msc",
            CodebookMethod::Identity => "identity",
        })
    }
}

impl FromStr for CodebookMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(CodebookMethod::Random),
            "msc" => Ok(CodebookMethod::Msc),
            "identity" => Ok(CodebookMethod::Identity),
            other => Err(Error::Format(format!("unknown codebook method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    entries: Vec<ComplexMatrix>,
    bits: u32,
    method: CodebookMethod,
    seed: Option<u64>,
}

impl Codebook {
    /// Validates size `2^bits`, square `n_r×n_r` entries and unitarity.
    pub fn new(
        entries: Vec<ComplexMatrix>,
        bits: u32,
        method: CodebookMethod,
        seed: Option<u64>,
    ) -> Result<Self> {
        Self::with_tolerance(entries, bits, method, seed, UNITARY_TOL)
    }

    fn with_tolerance(
        entries: Vec<ComplexMatrix>,
        bits: u32,
        method: CodebookMethod,
        seed: Option<u64>,
        tol: f64,
    ) -> Result<Self> {
        if bits > 16 {
            return invalid(format!("{bits} codebook bits is unreasonably large"));
        }
        if entries.len() != 1usize << bits {
            return invalid(format!(
                "{} entries for a {bits}-bit codebook",
                entries.len()
            ));
        }
        let n = entries[0].nrows();
        for (l, t) in entries.iter().enumerate() {
            if t.shape() != (n, n) || n == 0 {
                return invalid(format!("entry {l} has shape {:?}", t.shape()));
            }
            let r = unitarity_residual(t);
            if !(r < tol) {
                return invalid(format!("entry {l} is not unitary (residual {r:.3e})"));
            }
        }
        Ok(Codebook {
            entries,
            bits,
            method,
            seed,
        })
    }

    /// `{I}`: the relay just amplifies and forwards.
    pub fn identity(nr: usize) -> Result<Self> {
        if nr == 0 {
            return invalid("relay antenna count must be positive");
        }
        Self::new(vec![identity(nr)], 0, CodebookMethod::Identity, None)
    }

    /// `2^bits` independent Haar-random entries.
    pub fn random(nr: usize, bits: u32, seed: u64) -> Result<Self> {
        let mut rng = substream(seed, &[], Purpose::Codebook);
        let entries = (0..1usize << bits)
            .map(|_| random_unitary(nr, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries, bits, CodebookMethod::Random, Some(seed))
    }

    pub fn entries(&self) -> &[ComplexMatrix] {
        &self.entries
    }

    pub fn entry(&self, index: usize) -> &ComplexMatrix {
        &self.entries[index]
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn bits(&self) -> u32 {
        self.bits
    }

    pub fn nr(&self) -> usize {
        self.entries[0].nrows()
    }

    pub fn method(&self) -> CodebookMethod {
        self.method
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn max_unitarity_residual(&self) -> f64 {
        self.entries
            .iter()
            .map(unitarity_residual)
            .fold(0.0, f64::max)
    }

    /// Text serialisation: a `key=value` header, then one `re,im` line per
    /// element, entries in order, each entry row-major.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("version={FORMAT_VERSION}\n"));
        s.push_str(&format!("n_r={}\n", self.nr()));
        s.push_str(&format!("bits={}\n", self.bits));
        s.push_str(&format!("method={}\n", self.method));
        match self.seed {
            Some(seed) => s.push_str(&format!("seed={seed}\n")),
            None => s.push_str("seed=none\n"),
        }
        for t in &self.entries {
            for i in 0..t.nrows() {
                for j in 0..t.ncols() {
                    let z = t[(i, j)];
                    s.push_str(&format!("{:.17e},{:.17e}\n", z.re, z.im));
                }
            }
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let mut header = |key: &str| -> Result<String> {
            let line = lines
                .next()
                .ok_or_else(|| Error::Format(format!("missing header field {key}")))?;
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("malformed header line {line:?}")))?;
            if k.trim() != key {
                return Err(Error::Format(format!("expected {key}, found {k:?}")));
            }
            Ok(v.trim().to_string())
        };
        let parse_num = |key: &str, v: String| -> Result<u64> {
            v.parse()
                .map_err(|_| Error::Format(format!("bad value for {key}: {v:?}")))
        };
        let version = parse_num("version", header("version")?)?;
        if version != FORMAT_VERSION as u64 {
            return Err(Error::Format(format!(
                "unsupported codebook version {version}"
            )));
        }
        let nr = parse_num("n_r", header("n_r")?)? as usize;
        let bits = parse_num("bits", header("bits")?)? as u32;
        let method: CodebookMethod = header("method")?.parse()?;
        let seed = match header("seed")?.as_str() {
            "none" => None,
            v => Some(parse_num("seed", v.to_string())?),
        };
        if nr == 0 || bits > 16 {
            return Err(Error::Format(format!(
                "implausible header n_r={nr} bits={bits}"
            )));
        }
        let count = 1usize << bits;
        let mut values = Vec::with_capacity(count * nr * nr);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let (re, im) = line
                .split_once(',')
                .ok_or_else(|| Error::Format(format!("malformed element {line:?}")))?;
            let re: f64 = re
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad real part {re:?}")))?;
            let im: f64 = im
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("bad imaginary part {im:?}")))?;
            values.push(c(re, im));
        }
        if values.len() != count * nr * nr {
            return Err(Error::Format(format!(
                "expected {} elements, found {}",
                count * nr * nr,
                values.len()
            )));
        }
        let entries = values
            .chunks_exact(nr * nr)
            .map(|chunk| ComplexMatrix::from_row_slice_generic(Dyn(nr), Dyn(nr), chunk))
            .collect();
        Self::with_tolerance(entries, bits, method, seed, LOAD_UNITARY_TOL)
            .map_err(|e| Error::Format(e.to_string()))
    }
}

pub fn save_codebook(cb: &Codebook, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(cb.to_text().as_bytes())?;
    Ok(())
}

pub fn load_codebook(path: &Path) -> Result<Codebook> {
    Codebook::from_text(&fs::read_to_string(path)?)
}

/// Haar-distributed unitary: QR of an i.i.d. CN(0, 1) matrix with the
/// phases of `diag(R)` folded back into `Q`.
pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<ComplexMatrix> {
    if n == 0 {
        return invalid("unitary dimension must be at least 1");
    }
    let g = gaussian_matrix(n, n, rng);
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 {
            d / d.norm()
        } else {
            c(1.0, 0.0)
        };
        for i in 0..n {
            q[(i, j)] *= phase;
        }
    }
    Ok(q)
}

/// The candidate transmit vectors used to score codebook entries.
///
/// All `4^K` QPSK vectors in lexicographic order of their 2-bit labels when
/// that fits in `budget`; otherwise `budget` i.i.d. uniform draws. Vectors are
/// the columns of the returned `K×Φ` matrix.
pub fn transmit_vector_set<R: Rng + ?Sized>(
    k: usize,
    order: usize,
    budget: usize,
    rng: &mut R,
) -> Result<ComplexMatrix> {
    if order != QPSK_ORDER {
        return invalid(format!("only QPSK (order 4) is supported, got {order}"));
    }
    if budget == 0 || k == 0 {
        return invalid("need at least one user and a positive budget");
    }
    let full = (order as u128).checked_pow(k as u32);
    match full {
        Some(total) if total <= budget as u128 => {
            let total = total as usize;
            Ok(ComplexMatrix::from_fn(k, total, |user, idx| {
                let digit = (idx / order.pow((k - 1 - user) as u32)) % order;
                qpsk_from_index(digit)
            }))
        }
        _ => Ok(ComplexMatrix::from_fn(k, budget, |_, _| {
            qpsk_from_index(rng.random_range(0..order))
        })),
    }
}

/// Parameters of the offline MSC codebook design.
#[derive(Debug, Clone)]
pub struct MscConfig {
    /// Candidate pool size.
    pub alpha: usize,
    /// Number of experiments.
    pub experiments: usize,
    /// Output codebook bits; `2^bits ≤ alpha`.
    pub bits: u32,
    /// Largest transmit-vector set enumerated per experiment.
    pub phi_budget: usize,
    pub dims: Dims,
    pub stats: Arc<ErrorStats>,
    pub noise: (f64, f64),
    pub params: DesignParams,
    pub seed: u64,
}

impl MscConfig {
    fn validate(&self) -> Result<()> {
        self.dims.validate()?;
        if self.alpha == 0 || self.experiments == 0 || self.phi_budget == 0 {
            return invalid("alpha, experiments and phi_budget must be positive");
        }
        if self.bits > 16 || (1usize << self.bits) > self.alpha {
            return invalid(format!(
                "2^{} entries cannot be drawn from {} candidates",
                self.bits, self.alpha
            ));
        }
        Ok(())
    }
}

/// MSC codebook together with the selection statistics behind it.
#[derive(Debug, Clone)]
pub struct MscOutcome {
    pub codebook: Codebook,
    /// Pool indices of the chosen entries, most frequent first.
    pub chosen: Vec<usize>,
    /// Wins per pool candidate.
    pub histogram: Vec<usize>,
    /// Winning candidate of each experiment that was not skipped.
    pub winners: Vec<usize>,
    pub skipped: usize,
}

impl MscOutcome {
    /// Share of counted experiments won by the chosen entries.
    pub fn coverage(&self) -> f64 {
        let total: usize = self.histogram.iter().sum();
        if total == 0 {
            return 0.0;
        }
        self.chosen
            .iter()
            .map(|&i| self.histogram[i])
            .sum::<usize>() as f64
            / total as f64
    }
}

/// Orders candidates by descending count, ties to the lower index.
pub fn rank_histogram(histogram: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..histogram.len()).collect();
    order.sort_by(|&a, &b| histogram[b].cmp(&histogram[a]).then(a.cmp(&b)));
    order
}

/// Squared distance `Σ_j ‖b_j − β Ĥ2 F Ĥ1 P b_j‖²` over the columns of `vectors`.
pub fn candidate_distance(
    h1_hat: &ComplexMatrix,
    h2_hat: &ComplexMatrix,
    f: &ComplexMatrix,
    p: &ComplexMatrix,
    beta: f64,
    vectors: &ComplexMatrix,
) -> f64 {
    let pred = (h2_hat * f * h1_hat * p * vectors) * c(beta, 0.0);
    frobenius_sq(&(vectors - pred))
}

/// Runs the MSC design.
///
/// Candidates come from the `Candidates` stream of `cfg.seed`; experiment `e`
/// draws its channels and (if sampled) transmit vectors from streams keyed by
/// `e`, so the outcome does not depend on scheduling. An experiment in which
/// any candidate design fails or does not converge is skipped.
pub fn msc_design(cfg: &MscConfig) -> Result<MscOutcome> {
    cfg.validate()?;
    let mut cand_rng = substream(cfg.seed, &[], Purpose::Candidates);
    let pool = (0..cfg.alpha)
        .map(|_| random_unitary(cfg.dims.nr, &mut cand_rng))
        .collect::<Result<Vec<_>>>()?;
    let p0 = default_initial_precoder(cfg.dims.nt, cfg.dims.k);

    let winners: Vec<Option<usize>> = (0..cfg.experiments)
        .into_par_iter()
        .map(|e| -> Result<Option<usize>> {
            let mut ch_rng = substream(cfg.seed, &[e as u64], Purpose::Channel);
            let mut tx_rng = substream(cfg.seed, &[e as u64], Purpose::Data);
            let cs = draw_channel_set(cfg.dims, &cfg.stats, cfg.noise, &mut ch_rng)?;
            let vectors = transmit_vector_set(cfg.dims.k, QPSK_ORDER, cfg.phi_budget, &mut tx_rng)?;
            let mut best: Option<(f64, usize)> = None;
            for (l, f) in pool.iter().enumerate() {
                let input = DesignInput::from_channels(&cs, f, cfg.params);
                let pair = match design_pair(&input, &p0, l) {
                    Ok(pair) if pair.converged => pair,
                    Ok(_) => {
                        debug!("msc experiment {e}: candidate {l} did not converge, skipping");
                        return Ok(None);
                    }
                    Err(err) => {
                        debug!("msc experiment {e}: candidate {l} failed ({err}), skipping");
                        return Ok(None);
                    }
                };
                let d = candidate_distance(&cs.h1_hat, &cs.h2_hat, f, &pair.p, pair.beta, &vectors);
                if best.is_none_or(|(bd, _)| d < bd) {
                    best = Some((d, l));
                }
            }
            Ok(best.map(|(_, l)| l))
        })
        .collect::<Result<Vec<_>>>()?;

    let skipped = winners.iter().filter(|w| w.is_none()).count();
    if skipped > 0 {
        warn!(
            "msc design skipped {skipped} of {} experiments",
            cfg.experiments
        );
    }
    let winners: Vec<usize> = winners.into_iter().flatten().collect();
    let mut histogram = vec![0usize; cfg.alpha];
    for &w in &winners {
        histogram[w] += 1;
    }
    let chosen: Vec<usize> = rank_histogram(&histogram)
        .into_iter()
        .take(1usize << cfg.bits)
        .collect();
    let entries = chosen.iter().map(|&i| pool[i].clone()).collect();
    let codebook = Codebook::new(entries, cfg.bits, CodebookMethod::Msc, Some(cfg.seed))?;
    Ok(MscOutcome {
        codebook,
        chosen,
        histogram,
        winners,
        skipped,
    })
}

/// The candidate pool that [`msc_design`] draws for `seed`.
pub fn msc_candidate_pool(nr: usize, alpha: usize, seed: u64) -> Result<Vec<ComplexMatrix>> {
    let mut rng = substream(seed, &[], Purpose::Candidates);
    (0..alpha).map(|_| random_unitary(nr, &mut rng)).collect()
}
