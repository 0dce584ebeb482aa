//! `plume` — train an ensemble on site-day pollution data and predict
//! concentrations at unmonitored locations.
//!
//! The CLI is a thin shell: every subcommand dispatches to exactly one
//! library operation. Long-running stages print `STAGE <name> <pct>` lines to
//! standard error unless `--quiet` is set. Exit codes: 0 success, 1
//! validation error, 2 runtime failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use plume_core::config::{gen_config, load_config};
use plume_core::ingest::{read_csv_data, read_sites};
use plume_core::pipeline::{
    assemble_input, predict, preprocess_only, run_info, sites_path_for, train, PredictInput,
};
use plume_core::synth::{generate, generate_spatial, write_dataset, SynthSpec};
use plume_core::{Error, Progress};

#[derive(Parser)]
#[command(
    name = "plume",
    version,
    about = "Config-driven pollutant prediction platform"
)]
struct Cli {
    /// Primary configuration file
    #[arg(long, global = true, default_value = "config.yml")]
    config: PathBuf,

    /// Worker-pool size for parallel stages (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Override the configured random seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Suppress progress output (never changes results)
    #[arg(long, global = true)]
    quiet: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write config.yml with defaults plus any overrides
    GenConfig {
        /// Directory the config file is written into
        #[arg(long, default_value = ".")]
        dir: PathBuf,
        /// Field override, repeatable: --set two_stage=true
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Assemble the input CSV from the configured matrix tree
    Assemble,
    /// Fit and apply the preprocessing chain, checkpointing each step
    Preprocess,
    /// Train the configured base models and the ensemble
    Train,
    /// Predict with the trained chain
    Predict {
        /// Input site-day CSV (defaults to the configured csv_path)
        #[arg(long)]
        input: Option<PathBuf>,
        /// Predict on the configured grid, assembling covariates from the
        /// matrix tree
        #[arg(long)]
        grid: bool,
    },
    /// Generate a synthetic site-day dataset (data.csv + sites.csv)
    Synth {
        #[arg(long)]
        sites: usize,
        #[arg(long)]
        days: usize,
        /// Monitor noise standard deviation
        #[arg(long = "noise-sd", default_value_t = 1.0)]
        noise_sd: f64,
        /// Output directory
        #[arg(long)]
        out: PathBuf,
        /// Use the spatially-correlated-field generator
        #[arg(long)]
        spatial: bool,
    },
    /// Print the run manifest summary
    Info,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // includes --help/--version, which are not failures
            if e.use_stderr() {
                eprint!("{}", e);
                return ExitCode::from(1);
            }
            print!("{}", e);
            return ExitCode::SUCCESS;
        }
    };

    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: could not size the worker pool: {}", e);
            return ExitCode::from(2);
        }
    }

    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

fn run(cli: &Cli) -> Result<(), Error> {
    let progress = Progress::new(cli.quiet);
    match &cli.command {
        Command::GenConfig { dir, set } => {
            let mut overrides = Vec::new();
            for pair in set {
                let (key, value) = pair.split_once('=').ok_or_else(|| {
                    Error::Config(format!("--set expects KEY=VALUE, got '{}'", pair))
                })?;
                overrides.push((key.to_string(), value.to_string()));
            }
            if let Some(seed) = cli.seed {
                overrides.push(("seed".to_string(), seed.to_string()));
            }
            let config = gen_config(&overrides, dir)?;
            if !cli.quiet {
                eprintln!("wrote {}", dir.join("config.yml").display());
            }
            let _ = config;
            Ok(())
        }
        Command::Assemble => {
            let (config, root) = load(cli)?;
            let path = assemble_input(&config, &root, &progress)?;
            if !cli.quiet {
                eprintln!("assembled {}", path.display());
            }
            Ok(())
        }
        Command::Preprocess => {
            let (config, root) = load(cli)?;
            let path = preprocess_only(&config, &root, &progress)?;
            if !cli.quiet {
                eprintln!("prepped data at {}", path.display());
            }
            Ok(())
        }
        Command::Train => {
            let (config, root) = load(cli)?;
            train(&config, &root, &progress)?;
            Ok(())
        }
        Command::Predict { input, grid } => {
            let (config, root) = load(cli)?;
            let input = if *grid {
                let spec = config.grid.clone().ok_or_else(|| {
                    Error::Config("predict --grid needs a grid section in the config".into())
                })?;
                PredictInput::Grid(spec)
            } else {
                let csv = input.clone().unwrap_or_else(|| root.join(&config.csv_path));
                let table = read_csv_data(&csv)?;
                let sites_file = sites_path_for(&csv);
                let sites = if sites_file.exists() {
                    Some(read_sites(&sites_file)?)
                } else {
                    None
                };
                PredictInput::Table { table, sites }
            };
            let predictions = predict(&config, &root, input, &progress)?;
            if !cli.quiet {
                eprintln!("wrote {}", predictions.path.display());
            }
            Ok(())
        }
        Command::Synth {
            sites,
            days,
            noise_sd,
            out,
            spatial,
        } => {
            let spec = SynthSpec {
                n_sites: *sites,
                n_days: *days,
                noise_sd: *noise_sd,
                seed: cli.seed.unwrap_or(42),
            };
            let data = if *spatial {
                generate_spatial(&spec)?
            } else {
                generate(&spec)?
            };
            let (csv, sites_csv) = write_dataset(&data, out)?;
            if !cli.quiet {
                eprintln!("wrote {} and {}", csv.display(), sites_csv.display());
            }
            Ok(())
        }
        Command::Info => {
            let (config, root) = load(cli)?;
            print!("{}", run_info(&config, &root)?);
            Ok(())
        }
    }
}

/// Load the config and derive the run root (the config file's directory).
fn load(cli: &Cli) -> Result<(plume_core::PipelineConfig, PathBuf), Error> {
    let mut config = load_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let root = cli
        .config
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((config, root))
}
