//! `gbs`: sample, validate, fit and inspect Gaussian boson sampling runs.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gbs_core::error::GbsError;

use commands::{OracleQuery, TruthArg};
use config::Loaded;

#[derive(Debug)]
pub struct CliError {
    code: u8,
    message: String,
}

impl CliError {
    pub const CONFIG: u8 = 2;
    pub const NUMERICAL: u8 = 3;

    pub fn config(message: impl Into<String>) -> Self {
        CliError { code: Self::CONFIG, message: message.into() }
    }
}

impl From<GbsError> for CliError {
    fn from(e: GbsError) -> Self {
        let code = if e.is_numerical() { Self::NUMERICAL } else { Self::CONFIG };
        CliError { code, message: e.to_string() }
    }
}

#[derive(Parser)]
#[command(name = "gbs", version, about = "Positive-P Gaussian boson sampler and validation suite")]
struct Cli {
    /// Run configuration (JSON, config_version 1).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to output.dir from the config, then ".".
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Allow chi-square tests on fewer than 10^4 records.
    #[arg(long, global = true)]
    override_min_n: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw a count dataset with the phase-space sampler.
    Sample,
    /// Compare a dataset against a ground truth and write a report.
    Validate {
        #[arg(long)]
        data: PathBuf,
        /// exact, ensemble or counts:<path>.
        #[arg(long, default_value = "exact")]
        truth: TruthArg,
    },
    /// Fit the (t, eps) ground-truth correction to a dataset's total counts.
    Fit {
        #[arg(long)]
        data: PathBuf,
    },
    /// Exact pattern probability or grouped count distribution.
    Oracle {
        /// Click string such as 0110, or comma-separated counts for PNR.
        #[arg(long, conflicts_with = "partition")]
        pattern: Option<String>,
        /// total, halves or groups such as "0,1;2,3".
        #[arg(long)]
        partition: Option<String>,
        #[arg(long, default_value_t = 4)]
        cap: usize,
    },
    /// Grouped count distribution from a dataset, or from the configured
    /// positive-P ensemble when no dataset is given.
    Gcd {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "total")]
        partition: String,
        #[arg(long, default_value_t = 4)]
        cap: usize,
    },
}

fn run(cli: Cli) -> Result<PathBuf, CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config(format!("cannot start {n} threads: {e}")))?;
    }
    let path = cli.config.as_deref().ok_or_else(|| CliError::config("--config is required"))?;
    let cfg = Loaded::read(path)?;
    let out = cfg.out_dir(cli.out.as_deref());
    match cli.command {
        Command::Sample => commands::sample(&cfg, &out),
        Command::Validate { data, truth } => commands::validate(&cfg, &data, &truth, &out, cli.override_min_n),
        Command::Fit { data } => commands::fit(&cfg, &data, &out),
        Command::Oracle { pattern, partition, cap } => {
            let query = match (pattern, partition) {
                (Some(p), _) => OracleQuery::Pattern(p),
                (None, Some(spec)) => OracleQuery::Partition { spec, cap },
                (None, None) => return Err(CliError::config("oracle needs --pattern or --partition")),
            };
            commands::oracle(&cfg, &query, &out)
        }
        Command::Gcd { data, partition, cap } => commands::gcd(&cfg, data.as_deref(), &partition, cap, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(path) => {
            println!("{}", path.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}
