use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fedmm::experiment::{self, ExperimentConfig, Seeds};
use fedmm::{Error, MethodId, Result};

#[derive(Parser)]
#[command(name = "fedmm", version, about = "Federated multimodal training simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic feature CSVs for the configured topology.
    Generate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one method over a set of seeds.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// fedmm, local, multi-fedavg or centralized
        #[arg(long)]
        method: Option<String>,
        /// "A..B" (inclusive), "a,b,c" or a single seed
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the protocol trace.
        #[arg(long)]
        trace: bool,
    },
    /// Re-run training for each value of one config key.
    Ablation {
        #[arg(long)]
        config: Option<PathBuf>,
        /// key=v1,v2,... with key one of train.t0, model.fusion, topology.modality_subset
        #[arg(long)]
        sweep: String,
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Merge runs.csv files from several output directories.
    Report {
        #[arg(long = "in", required = true, num_args = 1..)]
        inputs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load(config: Option<&Path>) -> Result<ExperimentConfig> {
    match config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn apply_overrides(cfg: &mut ExperimentConfig, method: Option<&str>, seeds: Option<&str>) -> Result<()> {
    if let Some(m) = method {
        cfg.run.method = m.parse::<MethodId>()?;
    }
    if let Some(s) = seeds {
        cfg.run.seeds = Seeds::parse(s)?;
    }
    cfg.validate()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { config, seed, out } => {
            let cfg = load(config.as_deref())?;
            let files = experiment::cmd_generate(&cfg, seed, &out)?;
            eprintln!("wrote {} feature files to {}", files.len(), out.display());
        }
        Command::Train { config, method, seeds, out, trace } => {
            let mut cfg = load(config.as_deref())?;
            apply_overrides(&mut cfg, method.as_deref(), seeds.as_deref())?;
            cfg.run.trace |= trace;
            let out = out
                .or_else(|| cfg.run.out_dir.clone())
                .ok_or_else(|| Error::Config("no output directory: pass --out or set run.out_dir".into()))?;
            let result = experiment::cmd_train(&cfg, &out)?;
            print!("{}", experiment::summary_csv(&result.summary));
        }
        Command::Ablation { config, sweep, method, seeds, out } => {
            let mut cfg = load(config.as_deref())?;
            apply_overrides(&mut cfg, method.as_deref(), seeds.as_deref())?;
            let (key, values) = experiment::parse_sweep(&sweep)?;
            let rows = experiment::cmd_ablation(&cfg, &key, &values, &out)?;
            eprintln!("{} sweep rows written to {}", rows.len(), out.join("sweep.csv").display());
        }
        Command::Report { inputs, out } => {
            let rows = experiment::cmd_report(&inputs, &out)?;
            print!("{}", experiment::summary_csv(&rows));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fedmm: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
