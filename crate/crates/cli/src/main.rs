mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use wwtp_empc::experiments::ExperimentConfig;
use wwtp_empc::influent::Weather;

/// Economic predictive control of an activated-sludge plant with a learned
/// Koopman model.
#[derive(Debug, Parser)]
#[command(name = "wwtp-empc", version)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// TOML experiment configuration; missing keys take their defaults.
    #[arg(long, global = true, env = "WWTP_EMPC_CONFIG")]
    pub config: Option<PathBuf>,
    /// Base seed for data collection, initialization and shuffling.
    #[arg(long, global = true, env = "WWTP_EMPC_SEED")]
    pub seed: Option<u64>,
    /// Number of independently seeded models to train.
    #[arg(long, global = true, env = "WWTP_EMPC_SEEDS")]
    pub seeds: Option<usize>,
    /// 10^5 samples, 400 epochs and 14-day evaluations.
    #[arg(long, global = true, env = "WWTP_EMPC_FULL_SCALE")]
    pub full_scale: bool,
    /// Output directory (default: runs/<command>).
    #[arg(long, global = true, env = "WWTP_EMPC_OUT")]
    pub out: Option<PathBuf>,
    /// Gradient shards evaluated in parallel during training.
    #[arg(long, global = true, env = "WWTP_EMPC_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct ModelSource {
    /// Use a trained model instead of collecting and training one.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Train on this dataset instead of collecting a new one.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Settle the plant at constant inputs and compare with the reference
    /// operating point.
    Settle,
    /// Simulate excitation episodes and write a dataset.
    Collect {
        /// Weather conditions to sample episodes from.
        #[arg(long, value_delimiter = ',')]
        weathers: Option<Vec<Weather>>,
        /// Add process and measurement noise.
        #[arg(long)]
        noisy: bool,
        /// Also write the dataset as CSV.
        #[arg(long)]
        csv: bool,
    },
    /// Train one model per seed and write loss curves.
    Train {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Closed-loop comparison against the constant and random baselines.
    Evaluate {
        #[command(flatten)]
        source: ModelSource,
    },
    /// Clean versus noisy operation, clean- versus noisy-trained models.
    Robustness {
        #[command(flatten)]
        source: ModelSource,
        /// Model trained on noisy data.
        #[arg(long)]
        noisy_model: Option<PathBuf>,
    },
    /// One-factor-at-a-time sweep of learning rate and latent size.
    Sensitivity {
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Dry-weather-only versus all-weather training, evaluated on every
    /// weather.
    Generalize,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Settle => "settle",
            Command::Collect { .. } => "collect",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Robustness { .. } => "robustness",
            Command::Sensitivity { .. } => "sensitivity",
            Command::Generalize => "generalize",
        }
    }
}

fn load_config(g: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(n) = g.seeds {
        cfg.seeds = n;
    }
    if let Some(t) = g.threads {
        cfg.train.threads = t;
    }
    cfg.full_scale |= g.full_scale;
    let cfg = cfg.effective();
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<Vec<String>> {
    let cfg = load_config(&cli.global)?;
    let name = cli.command.name();
    let out = cli
        .global
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(name));
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    let mut ctx = commands::Context::new(name, cfg, out, cli.global.config.clone())?;
    match cli.command {
        Command::Settle => commands::settle(&mut ctx)?,
        Command::Collect {
            weathers,
            noisy,
            csv,
        } => commands::collect(&mut ctx, weathers, noisy, csv)?,
        Command::Train { dataset } => commands::train(&mut ctx, dataset)?,
        Command::Evaluate { source } => commands::evaluate(&mut ctx, &source)?,
        Command::Robustness {
            source,
            noisy_model,
        } => commands::robustness(&mut ctx, &source, noisy_model)?,
        Command::Sensitivity { dataset } => commands::sensitivity(&mut ctx, dataset)?,
        Command::Generalize => commands::generalize(&mut ctx)?,
    }
    ctx.finish()
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(failures) if failures.is_empty() => ExitCode::SUCCESS,
        Ok(failures) => {
            for f in &failures {
                eprintln!("failed: {f}");
            }
            ExitCode::FAILURE
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
