use std::io;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use quandary::pipelines::Method;
use quandary_service::commands::{self, RunOpts};
use quandary_service::{api, Backends, Config};

#[derive(Parser)]
#[command(name = "quandary", version, about = "Clarification questions for moral situations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(short, long, default_value = "quandary.toml")]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Named backend from the config.
    #[arg(long)]
    backend: Option<String>,
    /// Output file (directory for `train`); stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<(Config, RunOpts)> {
        let cfg = Config::load(&self.config)?;
        let opts = RunOpts {
            seed: self.seed,
            backend: self.backend.clone(),
            out: self.out.clone(),
        };
        Ok((cfg, opts))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the question policy with PPO.
    Train(Common),
    /// Estimate reward normalization statistics.
    EstimateStats(Common),
    /// Generate one question per situation with a baseline.
    Rank {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Method,
    },
    /// Score generated questions and updates.
    Eval(Common),
    /// Question-start statistics of the gold and silver corpora.
    Stats(Common),
    /// Run the HTTP session service.
    Serve {
        #[command(flatten)]
        common: Common,
        /// Overrides `serve.addr`.
        #[arg(long)]
        addr: Option<String>,
    },
    /// Interactive judgment loop on the terminal.
    Interact(Common),
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Train(c) => {
            let (cfg, opts) = c.load()?;
            let s = commands::train(&cfg, &opts)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::EstimateStats(c) => {
            let (cfg, opts) = c.load()?;
            commands::estimate(&cfg, &opts)?;
        }
        Command::Rank { common, method } => {
            let (cfg, opts) = common.load()?;
            commands::rank(&cfg, &opts, method)?;
        }
        Command::Eval(c) => {
            let (cfg, opts) = c.load()?;
            commands::eval(&cfg, &opts)?;
        }
        Command::Stats(c) => {
            let (cfg, opts) = c.load()?;
            commands::stats(&cfg, &opts)?;
        }
        Command::Serve { common, addr } => {
            let (mut cfg, opts) = common.load()?;
            if let Some(seed) = opts.seed {
                cfg.decoding.seed = Some(seed);
            }
            if let Some(p) = &opts.out {
                cfg.serve.persist = Some(p.clone());
            }
            let manager = Arc::new(Backends::from_config(&cfg, opts.backend.as_deref())?.sessions(&cfg));
            let addr = addr.unwrap_or_else(|| cfg.serve.addr.clone());
            tokio::runtime::Runtime::new()?.block_on(api::serve(manager, &addr))?;
        }
        Command::Interact(c) => {
            let (cfg, opts) = c.load()?;
            commands::interact(&cfg, &opts, io::stdin().lock(), io::stdout())?;
        }
    }
    Ok(())
}
