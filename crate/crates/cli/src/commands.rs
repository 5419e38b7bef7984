//! The `simulate`, `codebook` and `analyze` commands.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use sr_precoding::analysis::{
    analytic_curve, efficiency, sideinfo_bit_error, sr_overall_flops, AnalyticPoint, SinrForm,
};
use sr_precoding::channel::Dims;
use sr_precoding::codebook::{
    load_codebook, msc_design, save_codebook, Codebook, MscConfig, MscOutcome,
};
use sr_precoding::design::DesignParams;
use sr_precoding::link_sim::{run_ser_experiment, SerCurve, SimConfig};
use sr_precoding::modulation::QPSK_ORDER;
use sr_precoding::ErrorStats;

use crate::spec::{resolve_output_dir, Cell, CodebookSource, ExperimentSpec};
use crate::{io_err, CliError};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CSV_HEADER: &str = "snr_db,ser,half_width,symbols,blocks,design_failures";

/// Options shared by all commands.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub force: bool,
    pub seed: Option<u64>,
    pub output_root: Option<PathBuf>,
}

fn sha256_hex(parts: &[&[u8]]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    hex::encode(h.finalize())
}

fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), CliError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).map_err(|e| io_err(tmp.display(), e))?;
    fs::rename(&tmp, path).map_err(|e| io_err(path.display(), e))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| io_err(dir.display(), e))
}

fn to_json<T: Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("plain data serialises")
}

/// Builds, loads or reuses the codebook of one cell.
///
/// Generated codebooks are cached under `<out>/codebooks`, keyed by
/// everything their design depends on.
pub fn cell_codebook(
    source: &CodebookSource,
    cell: &Cell,
    out_dir: &Path,
    force: bool,
) -> Result<Codebook, CliError> {
    let sim = &cell.sim;
    let key_input = match source {
        CodebookSource::Identity => return Ok(Codebook::identity(sim.dims.nr)?),
        CodebookSource::File { path } => {
            let p = PathBuf::from(
                path.to_string_lossy()
                    .replace("{bits}", &cell.bits.to_string()),
            );
            let cb = load_codebook(&p).map_err(|e| match e {
                sr_precoding::Error::Io(io) => io_err(p.display(), io),
                other => CliError::Run(other),
            })?;
            if cb.bits() != cell.bits || cb.nr() != sim.dims.nr {
                return Err(CliError::Usage(format!(
                    "{} holds a {}-bit codebook for N_r = {}, cell needs {} bits and N_r = {}",
                    p.display(),
                    cb.bits(),
                    cb.nr(),
                    cell.bits,
                    sim.dims.nr
                )));
            }
            return Ok(cb);
        }
        CodebookSource::Random { .. } => json!({
            "source": source, "nr": sim.dims.nr, "bits": cell.bits,
        }),
        CodebookSource::Msc { .. } => json!({
            "source": source, "bits": cell.bits, "dims": sim.dims,
            "sigma_e_sq": sim.sigma_e_sq, "theta": sim.theta, "rho": sim.rho,
            "rho_on_sigma2": sim.rho_on_sigma2, "pt": sim.pt, "pr": sim.pr,
            "eps": sim.eps, "max_iter": sim.max_iter,
        }),
    };
    let key = sha256_hex(&[VERSION.as_bytes(), key_input.to_string().as_bytes()]);
    let dir = out_dir.join("codebooks");
    let path = dir.join(format!("{}.codebook", &key[..16]));
    if !force && path.exists() {
        if let Ok(cb) = load_codebook(&path) {
            info!("reusing codebook {}", path.display());
            return Ok(cb);
        }
    }
    let cb = match *source {
        CodebookSource::Random { seed } => Codebook::random(sim.dims.nr, cell.bits, seed)?,
        CodebookSource::Msc {
            seed,
            alpha,
            experiments,
            phi_budget,
            snr_db,
        } => {
            let noise = sim.noise_variance(snr_db);
            let cfg = MscConfig {
                alpha,
                experiments,
                bits: cell.bits,
                phi_budget,
                dims: sim.dims,
                stats: Arc::new(sim.error_stats()?),
                noise: (noise, noise),
                params: sim.design_params(),
                seed,
            };
            msc_design(&cfg)?.codebook
        }
        CodebookSource::Identity | CodebookSource::File { .. } => unreachable!(),
    };
    create_dir(&dir)?;
    save_codebook(&cb, &path)?;
    Ok(cb)
}

/// Cache key of a cell result: configuration, codebook content and version.
pub fn cell_hash(cell: &Cell, source: &CodebookSource, codebook: &Codebook) -> String {
    sha256_hex(&[
        VERSION.as_bytes(),
        to_json(cell).as_bytes(),
        to_json(source).as_bytes(),
        codebook.to_text().as_bytes(),
    ])
}

pub fn curve_csv(curve: &SerCurve) -> String {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for p in &curve.points {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            p.snr_db,
            p.ser(),
            p.half_width(),
            p.symbols,
            p.blocks,
            p.design_failures
        );
    }
    s
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CellMetadata {
    pub version: String,
    pub hash: String,
    pub cell: String,
    pub bits: u32,
    pub seed: u64,
    pub config: serde_json::Value,
    pub codebook: serde_json::Value,
    pub curve: SerCurve,
}

fn cached(csv: &Path, meta: &Path, hash: &str, rows: usize) -> bool {
    let Ok(text) = fs::read_to_string(meta) else {
        return false;
    };
    let Ok(m) = serde_json::from_str::<CellMetadata>(&text) else {
        return false;
    };
    let Ok(body) = fs::read_to_string(csv) else {
        return false;
    };
    m.hash == hash && body.lines().count() == rows + 1 && body.starts_with(CSV_HEADER)
}

/// Runs every cell of a spec, writing status lines and summary tables.
pub fn simulate(
    spec: &ExperimentSpec,
    opts: &RunOptions,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mut spec = spec.clone();
    if let Some(seed) = opts.seed {
        spec.sim.master_seed = seed;
    }
    let dir = resolve_output_dir(&spec.output_dir, opts.output_root.as_deref());
    create_dir(&dir)?;
    let cells = spec.cells();
    let say = |out: &mut dyn Write, line: String| -> Result<(), CliError> {
        writeln!(out, "{line}").map_err(|e| io_err("stdout", e))
    };
    say(
        out,
        format!(
            "{}: {} cell(s) -> {}",
            spec.name,
            cells.len(),
            dir.display()
        ),
    )?;
    for cell in &cells {
        let codebook = cell_codebook(&spec.codebook, cell, &dir, opts.force)?;
        let hash = cell_hash(cell, &spec.codebook, &codebook);
        let csv = dir.join(format!("{}.csv", cell.name));
        let meta = dir.join(format!("{}.json", cell.name));
        if !opts.force && cached(&csv, &meta, &hash, cell.sim.snr_db.len()) {
            say(out, format!("{}: skipped (cached)", cell.name))?;
            continue;
        }
        let curve = run_ser_experiment(&cell.sim, &codebook)?;
        write_atomic(&csv, curve_csv(&curve).as_bytes())?;
        let metadata = CellMetadata {
            version: VERSION.to_string(),
            hash,
            cell: cell.name.clone(),
            bits: cell.bits,
            seed: cell.sim.master_seed,
            config: serde_json::to_value(&cell.sim).expect("config serialises"),
            codebook: json!({
                "source": spec.codebook,
                "method": codebook.method().to_string(),
                "bits": codebook.bits(),
                "sha256": sha256_hex(&[codebook.to_text().as_bytes()]),
            }),
            curve: curve.clone(),
        };
        let text = serde_json::to_string_pretty(&metadata).expect("metadata serialises");
        write_atomic(&meta, text.as_bytes())?;
        say(out, format!("{}: done", cell.name))?;
        say(out, summary_table(&curve))?;
    }
    Ok(())
}

fn summary_table(curve: &SerCurve) -> String {
    let mut s = format!(
        "  {:>7} {:>12} {:>10} {:>10} {:>8}",
        "snr_db", "ser", "±95%", "symbols", "failed"
    );
    for p in &curve.points {
        let _ = write!(
            s,
            "\n  {:>7} {:>12.4e} {:>10.2e} {:>10} {:>8}",
            p.snr_db,
            p.ser(),
            p.half_width(),
            p.symbols,
            p.design_failures
        );
    }
    s
}

/// `codebook random` configuration.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomCodebookConfig {
    pub nr: usize,
    pub bits: u32,
    #[serde(default = "one")]
    pub seed: u64,
}

fn one() -> u64 {
    1
}

/// `codebook msc` configuration.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MscCodebookConfig {
    pub bits: u32,
    pub alpha: usize,
    pub experiments: usize,
    #[serde(default = "phi_budget")]
    pub phi_budget: usize,
    #[serde(default = "one")]
    pub seed: u64,
    #[serde(default = "ten")]
    pub snr_db: f64,
    #[serde(default = "default_dims")]
    pub dims: Dims,
    #[serde(default)]
    pub sigma_e_sq: f64,
    #[serde(default)]
    pub theta: f64,
    #[serde(default)]
    pub rho: f64,
    #[serde(default)]
    pub rho_on_sigma2: bool,
    pub pt: Option<f64>,
    pub pr: Option<f64>,
    #[serde(default = "eps")]
    pub eps: f64,
    #[serde(default = "max_iter")]
    pub max_iter: usize,
}

fn phi_budget() -> usize {
    256
}
fn ten() -> f64 {
    10.0
}
fn default_dims() -> Dims {
    Dims::square(6)
}
fn eps() -> f64 {
    1e-4
}
fn max_iter() -> usize {
    200
}

impl MscCodebookConfig {
    pub fn to_msc(&self) -> Result<MscConfig, CliError> {
        let k = self.dims.k as f64;
        let pt = self.pt.unwrap_or(k);
        let noise = pt / 10f64.powf(self.snr_db / 10.0);
        Ok(MscConfig {
            alpha: self.alpha,
            experiments: self.experiments,
            bits: self.bits,
            phi_budget: self.phi_budget,
            dims: self.dims,
            stats: Arc::new(ErrorStats::exponential(
                self.dims,
                self.sigma_e_sq,
                self.theta,
                self.rho,
                self.rho_on_sigma2,
            )?),
            noise: (noise, noise),
            params: DesignParams {
                pt,
                pr: self.pr.unwrap_or(pt),
                eps: self.eps,
                max_iter: self.max_iter,
            },
            seed: self.seed,
        })
    }
}

fn read_toml<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path.display(), e))?;
    toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn invalid_to_usage(e: sr_precoding::Error) -> CliError {
    match e {
        sr_precoding::Error::InvalidArgument(m) => CliError::Usage(m),
        other => CliError::Run(other),
    }
}

pub fn codebook_random(
    cfg: &Path,
    output: &Path,
    opts: &RunOptions,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let c: RandomCodebookConfig = read_toml(cfg)?;
    let seed = opts.seed.unwrap_or(c.seed);
    let cb = Codebook::random(c.nr, c.bits, seed).map_err(invalid_to_usage)?;
    save_codebook(&cb, output)?;
    writeln!(
        out,
        "wrote {} entries ({}x{}, seed {seed}) to {}",
        cb.len(),
        c.nr,
        c.nr,
        output.display()
    )
    .map_err(|e| io_err("stdout", e))
}

/// Path of the histogram report written next to an MSC codebook.
pub fn report_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".report.json");
    PathBuf::from(s)
}

pub fn msc_report(outcome: &MscOutcome, cfg: &MscConfig) -> serde_json::Value {
    json!({
        "bits": cfg.bits,
        "alpha": cfg.alpha,
        "experiments": cfg.experiments,
        "skipped": outcome.skipped,
        "coverage": outcome.coverage(),
        "chosen": outcome.chosen,
        "histogram": outcome.histogram,
    })
}

pub fn codebook_msc(
    cfg: &Path,
    output: &Path,
    opts: &RunOptions,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let c: MscCodebookConfig = read_toml(cfg)?;
    let mut msc = c.to_msc().map_err(|e| match e {
        CliError::Run(inner) => invalid_to_usage(inner),
        other => other,
    })?;
    if let Some(seed) = opts.seed {
        msc.seed = seed;
    }
    let outcome = msc_design(&msc).map_err(invalid_to_usage)?;
    save_codebook(&outcome.codebook, output)?;
    let report = msc_report(&outcome, &msc);
    let rp = report_path(output);
    write_atomic(
        &rp,
        serde_json::to_string_pretty(&report)
            .expect("report")
            .as_bytes(),
    )?;
    let w = |out: &mut dyn Write, line: String| {
        writeln!(out, "{line}").map_err(|e| io_err("stdout", e))
    };
    w(
        out,
        format!(
            "msc: {} experiments, {} skipped, {} entries from {} candidates",
            msc.experiments,
            outcome.skipped,
            outcome.codebook.len(),
            msc.alpha
        ),
    )?;
    w(out, format!("coverage {:.4}", outcome.coverage()))?;
    w(
        out,
        format!("  {:>4} {:>9} {:>6}", "rank", "candidate", "wins"),
    )?;
    for (rank, &i) in outcome.chosen.iter().enumerate() {
        w(
            out,
            format!("  {:>4} {:>9} {:>6}", rank + 1, i, outcome.histogram[i]),
        )?;
    }
    w(
        out,
        format!("wrote {} and {}", output.display(), rp.display()),
    )
}

pub const ANALYTIC_HEADER: &str = "snr_db,ser,p_perfect,draws,source";

pub fn analytic_csv(points: &[AnalyticPoint]) -> String {
    let mut s = String::from(ANALYTIC_HEADER);
    s.push('\n');
    for p in points {
        let _ = writeln!(
            s,
            "{},{},{},{},analytic",
            p.snr_db, p.ser, p.p_perfect, p.draws
        );
    }
    s
}

/// Analytic SER curves, efficiency and FLOP counts for every cell.
pub fn analyze(
    spec: &ExperimentSpec,
    opts: &RunOptions,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let mut spec = spec.clone();
    if let Some(seed) = opts.seed {
        spec.sim.master_seed = seed;
    }
    let dir = resolve_output_dir(&spec.output_dir, opts.output_root.as_deref());
    let adir = dir.join("analytic");
    create_dir(&adir)?;
    let w = |out: &mut dyn Write, line: String| {
        writeln!(out, "{line}").map_err(|e| io_err("stdout", e))
    };
    for cell in spec.cells() {
        let cb = cell_codebook(&spec.codebook, &cell, &dir, opts.force)?;
        let pb = spec
            .analysis
            .gamma
            .map_or(cell.sim.pe_sideinfo, sideinfo_bit_error);
        let sim: &SimConfig = &cell.sim;
        let points = analytic_curve(sim, &cb, pb, spec.analysis.draws, SinrForm::Corrected)?;
        let path = adir.join(format!("{}.csv", cell.name));
        write_atomic(&path, analytic_csv(&points).as_bytes())?;
        let eta = efficiency(
            sim.dims.k,
            sim.block_len,
            QPSK_ORDER,
            cell.bits,
            sim.beta_bits,
        )?;
        let flops = sr_overall_flops(sim.dims, sim.block_len, spec.analysis.iterations, cell.bits);
        w(
            out,
            format!(
                "{}: efficiency {:.4}, P_b {:.3e}, ~{:.3e} FLOPs per block ({} iterations)",
                cell.name, eta, pb, flops, spec.analysis.iterations
            ),
        )?;
        for p in &points {
            w(
                out,
                format!(
                    "  snr {:>6} dB  ser {:.4e}  P(all side bits ok) {:.4}",
                    p.snr_db, p.ser, p.p_perfect
                ),
            )?;
        }
    }
    Ok(())
}
