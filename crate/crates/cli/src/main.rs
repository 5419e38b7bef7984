use std::io;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sr_precoding_cli::commands::{self, RunOptions};
use sr_precoding_cli::spec::ExperimentSpec;
use sr_precoding_cli::CliError;

/// Environment variable naming the root for relative output directories.
const OUTPUT_ROOT_VAR: &str = "SRPREC_OUTPUT_ROOT";

#[derive(Parser)]
#[command(
    name = "srprec",
    version,
    about = "Switched-relaying robust precoding experiments"
)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Recompute cached results and codebooks.
    #[arg(long, global = true)]
    force: bool,
    /// Override the master seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the SER sweep described by an experiment spec.
    Simulate { spec: PathBuf },
    /// Design a codebook.
    Codebook {
        #[command(subcommand)]
        kind: CodebookKind,
    },
    /// Analytic SER curves, efficiency and complexity for a spec.
    Analyze { spec: PathBuf },
}

#[derive(Subcommand)]
enum CodebookKind {
    Random {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    Msc {
        config: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    let opts = RunOptions {
        force: cli.force,
        seed: cli.seed,
        output_root: std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from),
    };
    let mut workers = cli.workers;
    let spec = match &cli.command {
        Command::Simulate { spec } | Command::Analyze { spec } => {
            let s = ExperimentSpec::load(spec)?;
            workers = workers.or((s.workers > 0).then_some(s.workers));
            Some(s)
        }
        Command::Codebook { .. } => None,
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers {
        if n == 0 {
            return Err(CliError::Usage("--workers must be at least 1".into()));
        }
        pool = pool.num_threads(n);
    }
    let pool = pool
        .build()
        .map_err(|e| CliError::Usage(format!("cannot start workers: {e}")))?;
    pool.install(|| {
        let mut out = io::stdout().lock();
        match (&cli.command, spec) {
            (Command::Simulate { .. }, Some(spec)) => commands::simulate(&spec, &opts, &mut out),
            (Command::Analyze { .. }, Some(spec)) => commands::analyze(&spec, &opts, &mut out),
            (Command::Codebook { kind }, _) => match kind {
                CodebookKind::Random { config, output } => {
                    commands::codebook_random(config, output, &opts, &mut out)
                }
                CodebookKind::Msc { config, output } => {
                    commands::codebook_msc(config, output, &opts, &mut out)
                }
            },
            _ => unreachable!("spec is loaded for spec commands"),
        }
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
