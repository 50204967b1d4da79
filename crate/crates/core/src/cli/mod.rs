//! Command-line workflow: synthesis or retargeting of demonstrations,
//! meta-training, adaptation, closed-loop simulation and evaluation.
//!
//! Every command reads the same flat TOML config, writes into `--out`, and
//! is deterministic given its inputs and seed. Wall-clock timestamps only
//! go to the sidecar log `metaexo.log`.

mod commands;
mod config;
mod report;

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

pub use commands::{query_mse, track_rollout};
pub use config::{default_heldout_tasks, default_train_tasks, RunConfig, ENV_PREFIX};
pub use report::{
    AdaptSummary, EvalReport, InstanceResult, RetargetSummary, SimulateSummary, TrackingResult, RMS_BOUND,
};

use crate::{Error, Result};

/// Name of the timestamped sidecar log inside the output directory.
pub const LOG_FILE: &str = "metaexo.log";

#[derive(Debug, Parser)]
#[command(
    name = "metaexo",
    version,
    about = "Meta-imitation learning for elbow exoskeleton assistance"
)]
pub struct Cli {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; inputs produced by earlier commands are read from here.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Keypoint motion -> IK joint angles -> elbow trajectory CSV.
    Retarget,
    /// Synthesize training and held-out task datasets.
    Synth,
    /// Meta-train the task network.
    Train,
    /// Adapt the meta-learned initialization to one demonstration.
    Adapt,
    /// Track the adapted network's rollout on the simulated joint.
    Simulate,
    /// Adaptation-gain and tracking statistics over the held-out tasks.
    Eval,
    /// Encoder means and scales of every trajectory.
    ExportLatents,
}

/// Process exit code for a failed command.
pub fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) | Error::Format { .. } => 2,
        Error::Io { .. } => 3,
        Error::Checkpoint(_) => 4,
        Error::NaNDetected(_) => 5,
        Error::Divergence { .. } | Error::LyapunovViolation { .. } => 6,
        _ => 1,
    }
}

/// Appends timestamped lines to the sidecar log and echoes them to stderr.
pub(crate) struct RunLog {
    path: PathBuf,
}

impl RunLog {
    pub(crate) fn line(&self, msg: impl AsRef<str>) {
        let msg = msg.as_ref();
        eprintln!("{msg}");
        let stamp = std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .map(|d| d.as_secs_f64())
            .unwrap_or(0.0);
        if let Ok(mut f) = std::fs::OpenOptions::new().create(true).append(true).open(&self.path) {
            let _ = writeln!(f, "[{stamp:.3}] {msg}");
        }
    }
}

pub(crate) struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub log: RunLog,
}

impl Context {
    pub fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    /// A configured path, or `default` inside the output directory, which
    /// must exist.
    pub fn input(&self, configured: &Option<PathBuf>, default: &str, produced_by: &str) -> Result<PathBuf> {
        if let Some(p) = configured {
            return Ok(p.clone());
        }
        let p = self.path(default);
        if !p.exists() {
            return Err(Error::Config(format!(
                "missing input {}; run `{produced_by}` first or configure it",
                p.display()
            )));
        }
        Ok(p)
    }
}

/// Runs one command with config from `cli.config`, the process environment
/// and the global flags.
pub fn run(cli: &Cli) -> Result<()> {
    run_with_env(cli, std::env::vars())
}

pub fn run_with_env(cli: &Cli, env: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), env)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| Error::io(&cli.out, e))?;
    let ctx = Context {
        cfg,
        out: cli.out.clone(),
        log: RunLog {
            path: cli.out.join(LOG_FILE),
        },
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.cfg.threads)
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    ctx.log.line(format!(
        "{:?} (seed {}) -> {}",
        cli.command,
        ctx.cfg.seed,
        ctx.out.display()
    ));
    let result = pool.install(|| match cli.command {
        Command::Retarget => commands::retarget(&ctx),
        Command::Synth => commands::synth(&ctx),
        Command::Train => commands::train(&ctx),
        Command::Adapt => commands::adapt(&ctx),
        Command::Simulate => commands::simulate(&ctx),
        Command::Eval => commands::eval(&ctx),
        Command::ExportLatents => commands::export_latents(&ctx),
    });
    match &result {
        Ok(()) => ctx.log.line(format!("{:?} done", cli.command)),
        Err(e) => ctx.log.line(format!("{:?} failed: {e}", cli.command)),
    }
    result
}

pub(crate) fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e.to_string()))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
