//! `privcoll`: partition data, run parties, simulate, audit and benchmark.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use privcoll_protocol::config::{ConfigError, ProfileName, TrainingConfig};

#[derive(Parser)]
#[command(name = "privcoll", version, about = "Privacy-preserving collaborative training over vertically partitioned features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a dataset into per-party files plus a plan and manifest.
    Partition(Common),
    /// Run the aggregator over TCP.
    Agg(Common),
    /// Run one local node over TCP.
    Node {
        #[command(flatten)]
        common: Common,
        /// Node id, 1..=s.
        #[arg(long)]
        id: u16,
    },
    /// Run every party in one process.
    Simulate(Common),
    /// Check what a coalition of parties could learn.
    Audit {
        #[command(flatten)]
        common: Common,
        /// Coalition, e.g. "agg" or "agg,1".
        #[arg(long, default_value = "agg")]
        adversary: String,
        /// A directory written by `simulate`; its config.toml is audited.
        #[arg(long, conflicts_with = "config")]
        run: Option<PathBuf>,
    },
    /// Time the protocol under network profiles.
    Bench {
        #[command(flatten)]
        common: Common,
        /// Profiles to compare.
        #[arg(long, value_delimiter = ',', default_value = "lan,wan")]
        profiles: Vec<Profile>,
    },
    /// Compare the distributed run with the centralized trainer.
    Compare(Common),
}

#[derive(Args, Clone)]
struct Common {
    /// Training configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override training.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the network profile.
    #[arg(long, value_enum)]
    profile: Option<Profile>,
    /// Send products in the clear (insecure; for correctness checks only).
    #[arg(long)]
    plaintext: bool,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Profile {
    Lan,
    Wan,
    Custom,
}

impl From<Profile> for ProfileName {
    fn from(p: Profile) -> Self {
        match p {
            Profile::Lan => ProfileName::Lan,
            Profile::Wan => ProfileName::Wan,
            Profile::Custom => ProfileName::Custom,
        }
    }
}

/// Exit 2 for configuration problems, 1 for everything that fails later.
pub enum Failure {
    Config(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl Common {
    fn load(&self) -> Result<TrainingConfig, Failure> {
        let path = self
            .config
            .as_ref()
            .ok_or_else(|| Failure::Config("--config is required".into()))?;
        let mut cfg = TrainingConfig::load(path)?;
        if let Some(seed) = self.seed {
            cfg.training.seed = seed;
        }
        if self.plaintext {
            cfg.training.plaintext = true;
        }
        if let Some(p) = self.profile {
            cfg.net.profile = p.into();
        }
        cfg.validate()?;
        for w in cfg.warnings() {
            log::warn!("{w}");
        }
        if cfg.training.plaintext {
            eprintln!(
                "WARNING: plaintext mode. Every node's X^l W^l is sent to the aggregator unprotected. \
                 Use this only to check correctness, never with real data."
            );
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PRIVCOLL_LOG", "warn"))
        .format_timestamp_millis()
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Partition(c) => c.load().and_then(|cfg| commands::partition(&cfg, &c.out)),
        Command::Agg(c) => c.load().and_then(|cfg| commands::agg(&cfg, &c.out)),
        Command::Node { common, id } => common.load().and_then(|cfg| commands::node(&cfg, id, &common.out)),
        Command::Simulate(c) => c.load().and_then(|cfg| commands::simulate_cmd(&cfg, &c.out)),
        Command::Audit { common, adversary, run } => {
            let mut common = common;
            if let Some(dir) = run {
                common.config = Some(dir.join(commands::CONFIG_COPY));
            }
            common.load().and_then(|cfg| commands::audit(&cfg, &adversary, &common.out))
        }
        Command::Bench { common, profiles } => {
            let profiles: Vec<ProfileName> = profiles.into_iter().map(Into::into).collect();
            common.load().and_then(|cfg| commands::bench(&cfg, &profiles, &common.out))
        }
        Command::Compare(c) => c.load().and_then(|cfg| commands::compare(&cfg, &c.out)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
