use std::path::PathBuf;
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Parser, Subcommand};

use romdp_shield::config::{Algorithm, ExperimentConfig};
use romdp_shield::harness;

#[derive(Parser)]
#[command(
    name = "romdp-shield",
    about = "Constrained RL training with a reduced-order-MDP safety layer"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a training experiment from a config file.
    Train {
        /// TOML experiment configuration.
        #[arg(long)]
        config: PathBuf,
        /// Override the config's seed list with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory for metrics, logs and checkpoints.
        #[arg(long, default_value = "runs")]
        out_dir: PathBuf,
        /// Override the config's algorithm (ppo | ppo-lag | ppo-lag-shield).
        #[arg(long)]
        algo: Option<String>,
    },
    /// Print a structural report for a serialized reduced model.
    Inspect {
        /// Path to a model JSON file.
        model: PathBuf,
    },
    /// Aggregate per-seed metrics files into mean/std curves.
    Plotdata {
        /// Metrics CSV files, one per seed.
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        /// Output CSV for the aggregated curves.
        #[arg(long, default_value = "curves.csv")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<(), Box<dyn std::error::Error>> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train {
            config,
            seed,
            out_dir,
            algo,
        } => {
            let (mut cfg, warnings) = ExperimentConfig::load(&config)?;
            for w in warnings {
                eprintln!("warning: {w}");
            }
            if let Some(algo) = algo {
                cfg.algorithm = Algorithm::from_str(&algo)?;
            }
            if let Some(seed) = seed {
                cfg.seeds = vec![seed];
            }
            std::fs::create_dir_all(&out_dir)?;
            let results = harness::run_experiment(&cfg, &out_dir)?;
            for r in &results {
                println!("seed {}: {}", r.seed, r.metrics_path.display());
            }
            print!("{}", harness::summarize(&results));
        }
        Command::Inspect { model } => {
            print!("{}", harness::romdp_inspect(&model)?);
        }
        Command::Plotdata { metrics, out } => {
            let curves = harness::plotdata(&metrics)?;
            harness::write_curves(&out, &curves)?;
            println!("wrote {} epochs to {}", curves.len(), out.display());
        }
    }
    Ok(())
}
