mod commands;
mod config;
mod plot;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

/// Environment variable naming the directory that run outputs are placed under.
pub const OUTPUT_ROOT_VAR: &str = "MEMNAV_OUTPUT_ROOT";

/// Bad invocation or configuration (exit code 1).
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Debug, Parser)]
#[command(
    name = "memnav",
    version,
    about = "Exploration and image-goal navigation with a scene memory"
)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `--set stage2.ppo.lr=3e-4` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master seed (same as `--set seed=N`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory under the output root (same as `--set output=DIR`).
    #[arg(long, global = true)]
    output: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Collect random walks and train the reachability network.
    Stage1,
    /// Train the exploration policy.
    Stage2 {
        /// discrete, continuous, oracle (or a full mode name).
        #[arg(long)]
        reward: Option<String>,
        #[arg(long)]
        batches: Option<usize>,
    },
    /// Train the navigation policy.
    Stage3 {
        /// sparse, dense, oracle-distance (or a full mode name).
        #[arg(long)]
        reward: Option<String>,
        #[arg(long)]
        batches: Option<usize>,
    },
    /// Evaluate image-goal navigation.
    Eval {
        #[arg(long, value_enum, default_value = "trained")]
        policy: commands::PolicyChoice,
    },
    /// Render SVG plots from logs (defaults to the logs in the output directory).
    Plot { logs: Vec<PathBuf> },
    /// Check the stage-2 memory dump against the reachability network.
    Replay,
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut overrides = cli.overrides;
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(o) = &cli.output {
        overrides.push(format!(
            "output={}",
            toml::Value::String(o.display().to_string())
        ));
    }
    let cfg = config::RunConfig::load(cli.config.as_deref(), &overrides)?;
    let ctx = commands::Context::new(cfg)?;
    match cli.command {
        Command::Stage1 => commands::stage1(&ctx),
        Command::Stage2 { reward, batches } => commands::stage2(&ctx, reward.as_deref(), batches),
        Command::Stage3 { reward, batches } => commands::stage3(&ctx, reward.as_deref(), batches),
        Command::Eval { policy } => commands::eval(&ctx, policy),
        Command::Plot { logs } => commands::plot(&ctx, &logs),
        Command::Replay => commands::replay(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
