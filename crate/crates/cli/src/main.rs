use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use forecast_core::config::RunConfig;
use forecast_core::pipeline::{self, Manifest};

/// Vehicle trajectory forecasting with convolutional social pooling.
#[derive(Debug, Parser)]
#[command(name = "forecast", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic highway traffic.
    Simulate(Common),
    /// Parse track files and write the train/test instances.
    Ingest(Common),
    /// Train the configured models and fit the CV baseline.
    Train(Common),
    /// Report RMSE and NLL at 1-5 s for every model.
    Eval(Common),
    /// Compare robustness to masked grid rows.
    MaskExperiment(Common),
    /// Render the predictive density of one test instance.
    Heatmap(Common),
    /// Print the effective configuration and its hash.
    ShowConfig(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// Config file of `key = value` lines.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set train.epochs=5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Data directory (defaults to $FORECAST_DATA_DIR, then ./data).
    #[arg(long)]
    data_dir: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> forecast_core::Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply_override(o)?;
        }
        if let Some(seed) = self.seed {
            cfg.set_seed(seed);
        }
        if let Some(dir) = &self.data_dir {
            cfg.data_dir = dir.clone();
        }
        Ok(cfg)
    }
}

fn report(manifest: &Manifest) {
    println!("{} done (config {})", manifest.command, &manifest.config_hash[..12]);
    for (k, v) in &manifest.summary {
        println!("  {k}: {v}");
    }
    for a in &manifest.artifacts {
        println!("  wrote {} ({} bytes)", a.path, a.bytes);
    }
}

fn run(cli: Cli) -> forecast_core::Result<()> {
    let (common, cmd): (&Common, fn(&RunConfig) -> forecast_core::Result<Manifest>) = match &cli.command {
        Command::Simulate(c) => (c, pipeline::cmd_simulate),
        Command::Ingest(c) => (c, pipeline::cmd_ingest),
        Command::Train(c) => (c, pipeline::cmd_train),
        Command::Eval(c) => (c, pipeline::cmd_eval),
        Command::MaskExperiment(c) => (c, pipeline::cmd_mask_experiment),
        Command::Heatmap(c) => (c, pipeline::cmd_heatmap),
        Command::ShowConfig(c) => {
            let cfg = c.load()?;
            print!("{}", cfg.canonical());
            println!("# data_dir = {}\n# hash = {}", cfg.data_dir.display(), cfg.hash());
            return Ok(());
        }
    };
    let cfg = common.load()?;
    report(&cmd(&cfg)?);
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
