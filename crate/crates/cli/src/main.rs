use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use simpost::config::{ExperimentConfig, FeatureKind};
use simpost::error::Result;
use simpost::pipeline::{self, Layout};

#[derive(Parser)]
#[command(name = "simpost", version, about = "Likelihood-free posterior estimation for simulators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; the config `out_dir`, then `out`, otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the training dataset (and real rollouts when `true_params` is set).
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the conditional density.
    Train {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/dataset.csv`.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Overrides `features.kind`.
        #[arg(long, value_parser = parse_kind)]
        features: Option<FeatureKind>,
    },
    /// Recover the posterior at the observed statistics.
    Infer {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/model.json`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Draw posterior samples.
    Sample {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/posterior.json`.
        #[arg(long)]
        posterior: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        count: usize,
    },
    /// Score every configured method over repeated datasets.
    Evaluate {
        #[command(flatten)]
        common: Common,
    },
}

fn parse_kind(s: &str) -> std::result::Result<FeatureKind, String> {
    match s {
        "rff" => Ok(FeatureKind::Rff),
        "nn" => Ok(FeatureKind::Nn),
        other => Err(format!("unknown feature kind {other:?} (rff or nn)")),
    }
}

fn setup(common: &Common) -> Result<(ExperimentConfig, Layout)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    Ok((cfg, Layout::new(dir)))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common } => {
            let (cfg, out) = setup(&common)?;
            pipeline::cmd_generate(&cfg, &out)
        }
        Command::Train { common, dataset, features } => {
            let (cfg, out) = setup(&common)?;
            let dataset = dataset.unwrap_or_else(|| out.dataset());
            pipeline::cmd_train(&cfg, &dataset, features.unwrap_or(cfg.features.kind), &out)
        }
        Command::Infer { common, model } => {
            let (cfg, out) = setup(&common)?;
            let model = model.unwrap_or_else(|| out.model());
            pipeline::cmd_infer(&cfg, &model, &out)
        }
        Command::Sample { common, posterior, count } => {
            let (cfg, out) = setup(&common)?;
            let posterior = posterior.unwrap_or_else(|| out.posterior());
            pipeline::cmd_sample(&cfg, &posterior, count, &out)
        }
        Command::Evaluate { common } => {
            let (cfg, out) = setup(&common)?;
            pipeline::cmd_evaluate(&cfg, &out)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
