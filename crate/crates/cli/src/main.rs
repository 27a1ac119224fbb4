use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use pgas::dataset::{Dataset, DatasetMeta};

mod compare;
mod config;
mod error;
mod model;
mod run;

use config::ExperimentConfig;
use error::CliError;
use model::BuiltModel;

/// Particle Gibbs with ancestor sampling and rejuvenation: experiment runner.
#[derive(Parser)]
#[command(name = "pgas", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a dataset from the model block of a config.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; the dataset is written as `data.csv` inside it.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Explicit dataset path, overriding `--out`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run the configured sampler on a dataset.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Worker threads for epsilon sweeps (default: all cores).
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Compare runs against a reference run.
    Compare {
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// State component to compare.
        #[arg(long, default_value_t = 0)]
        component: usize,
        #[arg(long, default_value_t = 50)]
        max_lag: usize,
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::parse(&text)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn output_dir(flag: Option<PathBuf>, cfg: &ExperimentConfig) -> PathBuf {
    flag.or_else(|| cfg.output.clone())
        .unwrap_or_else(|| PathBuf::from("."))
}

fn simulate(cfg: &ExperimentConfig, path: &Path) -> Result<(), CliError> {
    let model = BuiltModel::build(&cfg.model)?;
    let horizon = cfg.horizon.unwrap_or_else(|| cfg.model.default_horizon());
    if horizon == 0 {
        return Err(CliError::Validation("horizon must be positive".into()));
    }
    let mut rng = cfg.rng();
    let (xs, ys) = model.simulate(horizon, &mut rng);
    let meta = DatasetMeta {
        model: cfg.model.name().to_string(),
        seed: cfg.seed,
        horizon,
        state_dim: xs.dim(),
        obs_dim: ys.dim(),
        parameters: cfg.model.parameters(),
    };
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    Dataset::new(meta, xs, ys)?.write(path)?;
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate {
            config,
            out,
            dataset,
            seed,
        } => {
            let cfg = load_config(&config, seed)?;
            let path = dataset.unwrap_or_else(|| output_dir(out, &cfg).join("data.csv"));
            simulate(&cfg, &path)?;
            log::info!("wrote {}", path.display());
            Ok(())
        }
        Command::Run {
            config,
            dataset,
            out,
            seed,
            threads,
        } => {
            let mut cfg = load_config(&config, seed)?;
            let out = output_dir(out, &cfg);
            cfg.output = Some(out.clone());
            run::cmd_run(&cfg, &dataset, &out, threads)
        }
        Command::Compare {
            reference,
            out,
            component,
            max_lag,
            runs,
        } => compare::cmd_compare(&reference, &runs, &out, component, max_lag),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
