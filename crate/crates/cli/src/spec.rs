//! Experiment specification files and their expansion into grid cells.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sr_precoding::link_sim::SimConfig;

use crate::CliError;

/// Where a cell's codebook comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum CodebookSource {
    /// `{I}`, the plain amplify-and-forward relay (B = 0).
    Identity,
    Random {
        #[serde(default = "default_codebook_seed")]
        seed: u64,
    },
    Msc {
        #[serde(default = "default_codebook_seed")]
        seed: u64,
        alpha: usize,
        experiments: usize,
        #[serde(default = "default_phi_budget")]
        phi_budget: usize,
        /// SNR of the offline design runs.
        #[serde(default = "default_design_snr")]
        snr_db: f64,
    },
    /// A saved codebook; `{bits}` in the path is replaced by the cell's B.
    File { path: PathBuf },
}

fn default_codebook_seed() -> u64 {
    1
}

fn default_phi_budget() -> usize {
    256
}

fn default_design_snr() -> f64 {
    10.0
}

impl Default for CodebookSource {
    fn default() -> Self {
        CodebookSource::Random {
            seed: default_codebook_seed(),
        }
    }
}

/// Sweep axes; an omitted axis keeps the base value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub bits: Option<Vec<u32>>,
    pub sigma_e_sq: Option<Vec<f64>>,
    pub theta: Option<Vec<f64>>,
    pub rho: Option<Vec<f64>>,
    pub pe: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Channel draws averaged per SNR point.
    #[serde(default = "default_analysis_draws")]
    pub draws: usize,
    /// Signalling-link mean bit SNR; when absent the cell's Pe is used as
    /// the bit error probability.
    pub gamma: Option<f64>,
    /// Design iterations charged in the FLOP estimate.
    #[serde(default = "default_flop_iterations")]
    pub iterations: usize,
}

fn default_analysis_draws() -> usize {
    200
}

fn default_flop_iterations() -> usize {
    10
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            draws: default_analysis_draws(),
            gamma: None,
            iterations: default_flop_iterations(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub name: String,
    pub output_dir: PathBuf,
    pub workers: usize,
    /// Base configuration; `sim.beta_bits` is C, the cell's B comes from the
    /// sweep (default `bits`).
    pub sim: SimConfig,
    pub bits: u32,
    pub sweep: Sweep,
    pub codebook: CodebookSource,
    pub analysis: AnalysisSection,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    name: Option<String>,
    output_dir: Option<PathBuf>,
    #[serde(default)]
    workers: usize,
    #[serde(default = "default_bits")]
    bits: u32,
    #[serde(default)]
    sim: toml::Table,
    #[serde(default)]
    sweep: Sweep,
    #[serde(default)]
    codebook: CodebookSource,
    #[serde(default)]
    analysis: AnalysisSection,
}

fn default_bits() -> u32 {
    4
}

impl ExperimentSpec {
    pub fn from_toml(text: &str, fallback_name: &str) -> Result<Self, CliError> {
        let raw: RawSpec =
            toml::from_str(text).map_err(|e| CliError::Usage(format!("malformed spec: {e}")))?;
        let has_power = raw.sim.contains_key("pt") || raw.sim.contains_key("pr");
        let mut sim: SimConfig = raw
            .sim
            .clone()
            .try_into()
            .map_err(|e| CliError::Usage(format!("malformed [sim] section: {e}")))?;
        if !has_power {
            sim.pt = sim.dims.k as f64;
            sim.pr = sim.dims.k as f64;
        } else {
            // A single budget applies to both ends unless both are given.
            if !raw.sim.contains_key("pr") {
                sim.pr = sim.pt;
            }
            if !raw.sim.contains_key("pt") {
                sim.pt = sim.pr;
            }
        }
        let name = raw.name.unwrap_or_else(|| fallback_name.to_string());
        let spec = ExperimentSpec {
            output_dir: raw
                .output_dir
                .unwrap_or_else(|| PathBuf::from("results").join(&name)),
            name,
            workers: raw.workers,
            sim,
            bits: raw.bits,
            sweep: raw.sweep,
            codebook: raw.codebook,
            analysis: raw.analysis,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
        let stem = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("experiment");
        Self::from_toml(&text, stem)
    }

    fn validate(&self) -> Result<(), CliError> {
        if self.sim.snr_db.is_empty() {
            return Err(CliError::Usage("no SNR points in [sim].snr_db".into()));
        }
        let axes = [
            ("bits", self.sweep.bits.as_ref().map(Vec::len)),
            ("sigma_e_sq", self.sweep.sigma_e_sq.as_ref().map(Vec::len)),
            ("theta", self.sweep.theta.as_ref().map(Vec::len)),
            ("rho", self.sweep.rho.as_ref().map(Vec::len)),
            ("pe", self.sweep.pe.as_ref().map(Vec::len)),
        ];
        if let Some((axis, _)) = axes.iter().find(|(_, n)| *n == Some(0)) {
            return Err(CliError::Usage(format!(
                "empty sweep: axis `{axis}` has no values"
            )));
        }
        let identity = matches!(self.codebook, CodebookSource::Identity);
        if identity && self.sweep.bits.iter().flatten().any(|&b| b != 0) {
            return Err(CliError::Usage("the identity codebook has B = 0".into()));
        }
        for cell in self.cells() {
            cell.sim
                .validate()
                .map_err(|e| CliError::Usage(format!("cell {}: {e}", cell.name)))?;
        }
        Ok(())
    }

    fn bit_values(&self) -> Vec<u32> {
        match self.codebook {
            CodebookSource::Identity => vec![0],
            _ => self.sweep.bits.clone().unwrap_or_else(|| vec![self.bits]),
        }
    }

    /// Cross product of the sweep axes, in a fixed order.
    pub fn cells(&self) -> Vec<Cell> {
        let s = &self.sim;
        let one = |v: &Option<Vec<f64>>, base: f64| v.clone().unwrap_or_else(|| vec![base]);
        let mut out = Vec::new();
        for &bits in &self.bit_values() {
            for &se in &one(&self.sweep.sigma_e_sq, s.sigma_e_sq) {
                for &theta in &one(&self.sweep.theta, s.theta) {
                    for &rho in &one(&self.sweep.rho, s.rho) {
                        for &pe in &one(&self.sweep.pe, s.pe_sideinfo) {
                            let sim = SimConfig {
                                sigma_e_sq: se,
                                theta,
                                rho,
                                pe_sideinfo: pe,
                                workers: 0,
                                ..s.clone()
                            };
                            out.push(Cell {
                                name: format!("B{bits}_se{se}_th{theta}_rho{rho}_pe{pe}"),
                                bits,
                                sim,
                            });
                        }
                    }
                }
            }
        }
        out
    }
}

/// One grid point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub name: String,
    pub bits: u32,
    pub sim: SimConfig,
}

/// Places a relative output directory under the output root, if one is set.
pub fn resolve_output_dir(dir: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(root) if dir.is_relative() => root.join(dir),
        _ => dir.to_path_buf(),
    }
}
