//! Pipeline commands, benchmark reporting and the live prediction service.
//!
//! Exit codes: 0 success, 1 invalid configuration or runtime failure,
//! 2 missing prerequisite artifact, 3 artifact built from a different
//! configuration or dataset, 64 command-line usage error.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};

pub mod config;
pub mod lift;
pub mod pipeline;
pub mod serve;

pub use config::PipelineConfig;
pub use pipeline::Context;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("missing prerequisite: {what}; run {step} first")]
    Missing { what: String, step: String },
    #[error("stale artifact: {0} (rerun the stage or pass --force)")]
    Stale(String),
    #[error(transparent)]
    Core(#[from] interact_core::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Missing { .. } => 2,
            CliError::Stale(_) => 3,
            _ => 1,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AgentArg {
    Human,
    Robot,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Hme,
    RawHr,
    RawR,
    Gaussian,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic two-agent dataset and its train/test split.
    Synth,
    /// Fit a motion embedding (human: Step 1, robot: Step 3).
    TrainEmbedding {
        #[arg(long, value_enum)]
        agent: AgentArg,
    },
    /// Fit the shared task dynamics on human-human trials (Step 2).
    TrainDynamics,
    /// Fit the robot mapping on human-robot trials (Step 4).
    TrainRobot,
    /// Fit the Gaussian baseline and the raw-input robot variants.
    TrainBaselines,
    /// Run the benchmark on the test split and write the report.
    Eval,
    /// Predict robot frames for one test trial.
    Rollout {
        /// Trial id; defaults to the first human-robot test trial.
        #[arg(long)]
        trial: Option<String>,
        #[arg(long, value_enum, default_value = "hme")]
        method: MethodArg,
        /// Observed frames before prediction starts.
        #[arg(long, default_value_t = 10)]
        observe: usize,
        #[arg(long, default_value_t = 30)]
        horizon: usize,
    },
    /// Serve the online predictor over websockets plus static files.
    Serve {
        #[arg(long)]
        port: Option<u16>,
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

#[derive(Debug, Parser)]
#[command(name = "interact", version, about = "Interactive motion pipeline")]
pub struct Cli {
    /// TOML pipeline configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the artifact root directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Use artifacts even when their config or dataset hash differs.
    #[arg(long, global = true)]
    pub force: bool,
    #[command(subcommand)]
    pub command: Command,
}

pub fn run_cli(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let mut cfg = cfg.effective(cli.seed)?;
    if let Some(out) = &cli.out {
        cfg.root = out.clone();
    }
    let ctx = Context::new(cfg, cli.force);
    log::info!(
        "interact {} | {:?} | seed {} | config {}",
        env!("CARGO_PKG_VERSION"),
        cli.command,
        ctx.cfg.seed,
        ctx.hash
    );
    match cli.command {
        Command::Synth => pipeline::cmd_synth(&ctx),
        Command::TrainEmbedding { agent: AgentArg::Human } => pipeline::cmd_train_human_embedding(&ctx),
        Command::TrainEmbedding { agent: AgentArg::Robot } => pipeline::cmd_train_robot_embedding(&ctx),
        Command::TrainDynamics => pipeline::cmd_train_dynamics(&ctx),
        Command::TrainRobot => pipeline::cmd_train_robot(&ctx),
        Command::TrainBaselines => pipeline::cmd_train_baselines(&ctx),
        Command::Eval => pipeline::cmd_eval(&ctx).map(|_| ()),
        Command::Rollout {
            trial,
            method,
            observe,
            horizon,
        } => pipeline::cmd_rollout(&ctx, trial.as_deref(), method, observe, horizon),
        Command::Serve { port, static_dir } => {
            let mut ctx = ctx;
            if let Some(p) = port {
                ctx.cfg.serve.port = p;
            }
            if let Some(d) = static_dir {
                ctx.cfg.serve.static_dir = d;
            }
            serve::cmd_serve(&ctx)
        }
    }
}

/// Parses `args` (program name first), runs the command, and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 64 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run_cli(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
