//! Command-line driver for belief-space planning experiments.
//!
//! Subcommands cover the full experiment lifecycle: `train` runs offline
//! policy iteration and writes checkpoints plus a metrics log, `evaluate`
//! replays a trained checkpoint online, `lavi` and `baseline` produce the
//! reference baselines, and `sweep` / `ablate` generate the parameter-study
//! tables. Every command is a pure function of (config file, master seed)
//! and copies its config verbatim into the output directory.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 training
//! divergence, 3 data starvation during collection.

mod commands;
mod output;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use beliefplan::config::{FileConfig, ResolvedEnv};
use beliefplan::error::{ConfigError, SelfPlayError, TrainError};

#[derive(Debug, Parser)]
#[command(
    name = "beliefplan",
    version,
    about = "Belief-space planning: offline training, online search, baselines"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Offline policy iteration: collect search data, train the network,
    /// checkpoint every iteration, and log holdout metrics.
    Train(TrainArgs),
    /// Run seeded evaluation episodes against a trained checkpoint.
    Evaluate(EvaluateArgs),
    /// Solve the interpolated belief-grid reference policy (1-D
    /// localization environments only) and evaluate it.
    Lavi(LaviArgs),
    /// Network-free baselines: random-rollout tree search, or the solved
    /// belief grid.
    Baseline(BaselineArgs),
    /// Mean return over an (k, alpha) progressive-widening grid.
    Sweep(SweepArgs),
    /// Ablation arms appending to one shared returns table.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Built-in environment: lightdark5, lightdark10, rocksample-15-15,
    /// or rocksample-20-20. Resolved against --preset when --config is
    /// not given.
    #[arg(long)]
    env: Option<String>,
    /// Committed preset family used with --env: "paper" replicates the
    /// published scale, "desk" is the reduced workstation scale.
    #[arg(long, default_value = "paper")]
    preset: String,
    /// Explicit TOML config; takes precedence over --env/--preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; every random stream in the run derives from it.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads for parallel episodes (0 keeps the library default).
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EvalMethod {
    /// Online tree search guided by the checkpoint.
    Search,
    /// Argmax of the raw policy head, no search.
    Rawpolicy,
    /// One-step lookahead on the raw value head, no search.
    Rawvalue,
}

impl EvalMethod {
    fn label(self) -> &'static str {
        match self {
            EvalMethod::Search => "search",
            EvalMethod::Rawpolicy => "rawpolicy",
            EvalMethod::Rawvalue => "rawvalue",
        }
    }
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint JSON produced by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = EvalMethod::Search)]
    method: EvalMethod,
    /// Override eval.n_seeds from the config.
    #[arg(long)]
    nseeds: Option<usize>,
}

#[derive(Debug, Args)]
struct LaviArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Override eval.n_seeds from the config.
    #[arg(long)]
    nseeds: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BaselineMethod {
    /// UCT search with random-rollout leaf values, no network.
    Rollout,
    /// Solve the belief grid and act greedily on it.
    Lavi,
}

#[derive(Debug, Args)]
struct BaselineArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum)]
    method: BaselineMethod,
    /// Override eval.n_seeds from the config.
    #[arg(long)]
    nseeds: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepGrid {
    /// Vary the belief-state widening law.
    State,
    /// Vary the action widening law.
    Action,
    /// Both grids, one CSV each.
    Both,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Checkpoint JSON produced by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, value_enum, default_value_t = SweepGrid::Both)]
    grid: SweepGrid,
    /// Override sweep.n_seeds from the config.
    #[arg(long)]
    nseeds: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AblateArm {
    /// Belief summary: mean plus std versus mean only (trains both).
    Repr,
    /// Widening draws from the policy head versus uniform (trains both).
    Widening,
    /// Policy-target Q exponent sweep (trains one run per value).
    Targets,
    /// Final-criterion exponent grid on a trained checkpoint.
    Zgrid,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    common: CommonArgs,
    #[arg(long, value_enum)]
    arm: AblateArm,
    /// Trained checkpoint; required by the zgrid arm.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Override ablate.n_seeds from the config.
    #[arg(long)]
    nseeds: Option<usize>,
}

// ---------------------------------------------------------------------------
// Errors and exit codes

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(ConfigError),
    SelfPlay(SelfPlayError),
    Io(std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Io(_) => 1,
            CliError::SelfPlay(e) => match e {
                SelfPlayError::Starvation { .. } => 3,
                SelfPlayError::Train(_) => 2,
                SelfPlayError::Io(_) => 1,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(msg) => write!(f, "{msg}"),
            CliError::Config(e) => write!(f, "{e}"),
            CliError::SelfPlay(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "{e}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

impl From<SelfPlayError> for CliError {
    fn from(e: SelfPlayError) -> Self {
        CliError::SelfPlay(e)
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        CliError::SelfPlay(SelfPlayError::Train(e))
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

// ---------------------------------------------------------------------------
// Config resolution

fn preset_text(preset: &str, env: &str) -> Option<&'static str> {
    Some(match (preset, env) {
        ("paper", "lightdark5") => include_str!("../presets/paper/lightdark5.toml"),
        ("paper", "lightdark10") => include_str!("../presets/paper/lightdark10.toml"),
        ("paper", "rocksample-15-15") => include_str!("../presets/paper/rocksample-15-15.toml"),
        ("paper", "rocksample-20-20") => include_str!("../presets/paper/rocksample-20-20.toml"),
        ("desk", "lightdark5") => include_str!("../presets/desk/lightdark5.toml"),
        ("desk", "lightdark10") => include_str!("../presets/desk/lightdark10.toml"),
        ("desk", "rocksample-15-15") => include_str!("../presets/desk/rocksample-15-15.toml"),
        ("desk", "rocksample-20-20") => include_str!("../presets/desk/rocksample-20-20.toml"),
        _ => return None,
    })
}

fn load_config(common: &CommonArgs) -> Result<(FileConfig, String), CliError> {
    if let Some(path) = &common.config {
        let (cfg, raw) = FileConfig::load(path)?;
        return Ok((cfg, raw));
    }
    if let Some(env) = &common.env {
        let raw = preset_text(&common.preset, env).ok_or_else(|| {
            CliError::Usage(format!(
                "no preset \"{}/{}\"; presets are paper|desk and envs are \
                 lightdark5|lightdark10|rocksample-15-15|rocksample-20-20",
                common.preset, env
            ))
        })?;
        return Ok((FileConfig::parse(raw)?, raw.to_string()));
    }
    Err(CliError::Usage(
        "pass --config FILE or --env NAME (with optional --preset)".to_string(),
    ))
}

/// Resolve the run context shared by every command: worker pool, parsed
/// config, output directory with a verbatim copy of the config inside.
fn prepare(common: &CommonArgs) -> Result<commands::Ctx, CliError> {
    if common.workers > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(common.workers)
            .build_global()
            .map_err(|e| CliError::Usage(format!("worker pool: {e}")))?;
    }
    let (cfg, raw) = load_config(common)?;
    std::fs::create_dir_all(&common.out)?;
    std::fs::write(common.out.join("config.toml"), &raw)?;
    Ok(commands::Ctx {
        cfg,
        seed: common.seed,
        out: common.out.clone(),
    })
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train(args) => {
            let ctx = prepare(&args.common)?;
            match ctx.cfg.env()?.build()? {
                ResolvedEnv::LightDark(env) => commands::train(&env, &ctx),
                ResolvedEnv::RockSample(env) => commands::train(&env, &ctx),
            }
        }
        Command::Evaluate(args) => {
            let ctx = prepare(&args.common)?;
            match ctx.cfg.env()?.build()? {
                ResolvedEnv::LightDark(env) => {
                    commands::evaluate(&env, &ctx, &args.checkpoint, args.method, args.nseeds)
                }
                ResolvedEnv::RockSample(env) => {
                    commands::evaluate(&env, &ctx, &args.checkpoint, args.method, args.nseeds)
                }
            }
        }
        Command::Lavi(args) => {
            let ctx = prepare(&args.common)?;
            match ctx.cfg.env()?.build()? {
                ResolvedEnv::LightDark(env) => commands::lavi(&env, &ctx, args.nseeds),
                ResolvedEnv::RockSample(_) => Err(CliError::Usage(
                    "the belief-grid solver is unsupported for rocksample environments"
                        .to_string(),
                )),
            }
        }
        Command::Baseline(args) => {
            let ctx = prepare(&args.common)?;
            let env = ctx.cfg.env()?.build()?;
            match (args.method, env) {
                (BaselineMethod::Rollout, ResolvedEnv::LightDark(env)) => {
                    commands::baseline_rollout(&env, &ctx, args.nseeds)
                }
                (BaselineMethod::Rollout, ResolvedEnv::RockSample(env)) => {
                    commands::baseline_rollout(&env, &ctx, args.nseeds)
                }
                (BaselineMethod::Lavi, ResolvedEnv::LightDark(env)) => {
                    commands::lavi(&env, &ctx, args.nseeds)
                }
                (BaselineMethod::Lavi, ResolvedEnv::RockSample(_)) => Err(CliError::Usage(
                    "the lavi baseline is unsupported for rocksample environments".to_string(),
                )),
            }
        }
        Command::Sweep(args) => {
            let ctx = prepare(&args.common)?;
            match ctx.cfg.env()?.build()? {
                ResolvedEnv::LightDark(env) => {
                    commands::sweep(&env, &ctx, &args.checkpoint, args.grid, args.nseeds)
                }
                ResolvedEnv::RockSample(env) => {
                    commands::sweep(&env, &ctx, &args.checkpoint, args.grid, args.nseeds)
                }
            }
        }
        Command::Ablate(args) => {
            let ctx = prepare(&args.common)?;
            match ctx.cfg.env()?.build()? {
                ResolvedEnv::LightDark(env) => {
                    commands::ablate(&env, &ctx, args.arm, args.checkpoint.as_deref(), args.nseeds)
                }
                ResolvedEnv::RockSample(env) => {
                    commands::ablate(&env, &ctx, args.arm, args.checkpoint.as_deref(), args.nseeds)
                }
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version requests are not failures.
            let is_error = e.use_stderr();
            let _ = e.print();
            return if is_error {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
