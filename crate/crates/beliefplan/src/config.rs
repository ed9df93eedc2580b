//! TOML run configuration.
//!
//! Every tool reads the same file shape: an `[env]` section naming the
//! environment, filter and network settings, two search parameterizations
//! (`[search.offline]` for data collection and `[search.online]` for final
//! evaluation), the trainer, the outer loop, and optional sections for the
//! grid solver, widening sweeps, and ablations.
//!
//! Parsing is strict: unknown keys are rejected, and every section validates
//! its ranges before anything runs. All failures surface as
//! [`ConfigError`], which the CLI maps to exit code 1.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::belief::{ReprMode, UpdateConfig};
use crate::envs::{LightDark, RockSample};
use crate::error::ConfigError;
use crate::lavi::LaviConfig;
use crate::mcts::{Exploration, FinalCriterion, SearchConfig, Widening, WideningPrior};
use crate::nnet::{ArchSpec, OptimizerKind, TrainConfig, ValueLoss};
use crate::pomdp::GenerativePomdp;
use crate::selfplay::SelfPlayConfig;

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// Top-level file. Sections are optional at parse time so that a missing one
/// can be reported by name instead of as a generic deserialization error.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub env: Option<EnvSection>,
    pub belief: Option<BeliefSection>,
    pub net: Option<NetSection>,
    pub search: Option<SearchSection>,
    pub train: Option<TrainSection>,
    pub selfplay: Option<SelfPlaySection>,
    pub eval: Option<EvalSection>,
    pub rollout: Option<RolloutSection>,
    pub lavi: Option<LaviSection>,
    pub sweep: Option<SweepSection>,
    pub ablate: Option<AblateSection>,
}

impl FileConfig {
    pub fn parse(raw: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(raw)?)
    }

    /// Read and parse, returning the raw text alongside so callers can copy
    /// the file verbatim into their output directory.
    pub fn load(path: &Path) -> Result<(Self, String), ConfigError> {
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.display().to_string(),
            source,
        })?;
        Ok((Self::parse(&raw)?, raw))
    }

    pub fn env(&self) -> Result<&EnvSection, ConfigError> {
        self.env.as_ref().ok_or(ConfigError::MissingSection("env"))
    }

    pub fn belief(&self) -> Result<&BeliefSection, ConfigError> {
        self.belief.as_ref().ok_or(ConfigError::MissingSection("belief"))
    }

    pub fn net(&self) -> Result<&NetSection, ConfigError> {
        self.net.as_ref().ok_or(ConfigError::MissingSection("net"))
    }

    pub fn search_offline(&self) -> Result<&SearchParams, ConfigError> {
        let s = self.search.as_ref().ok_or(ConfigError::MissingSection("search"))?;
        s.offline.as_ref().ok_or(ConfigError::MissingSection("search.offline"))
    }

    pub fn search_online(&self) -> Result<&SearchParams, ConfigError> {
        let s = self.search.as_ref().ok_or(ConfigError::MissingSection("search"))?;
        s.online.as_ref().ok_or(ConfigError::MissingSection("search.online"))
    }

    pub fn train(&self) -> Result<&TrainSection, ConfigError> {
        self.train.as_ref().ok_or(ConfigError::MissingSection("train"))
    }

    pub fn selfplay(&self) -> Result<&SelfPlaySection, ConfigError> {
        self.selfplay.as_ref().ok_or(ConfigError::MissingSection("selfplay"))
    }

    pub fn eval(&self) -> Result<&EvalSection, ConfigError> {
        self.eval.as_ref().ok_or(ConfigError::MissingSection("eval"))
    }

    pub fn rollout(&self) -> Result<&RolloutSection, ConfigError> {
        self.rollout.as_ref().ok_or(ConfigError::MissingSection("rollout"))
    }

    pub fn lavi(&self) -> Result<&LaviSection, ConfigError> {
        self.lavi.as_ref().ok_or(ConfigError::MissingSection("lavi"))
    }

    pub fn sweep(&self) -> Result<&SweepSection, ConfigError> {
        self.sweep.as_ref().ok_or(ConfigError::MissingSection("sweep"))
    }

    pub fn ablate(&self) -> Result<&AblateSection, ConfigError> {
        self.ablate.as_ref().ok_or(ConfigError::MissingSection("ablate"))
    }
}

// ---------------------------------------------------------------------------
// Environment

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    Lightdark,
    Rocksample,
}

/// Flat environment section: `kind` selects which of the optional parameter
/// groups must be present; parameters of the other family must be absent.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub kind: EnvKind,
    pub gamma: f64,
    pub max_steps: usize,

    // One-dimensional localization.
    pub light_y: Option<f64>,
    pub sigma_slope: Option<f64>,
    pub sigma_floor: Option<f64>,
    pub init_mean: Option<f64>,
    pub init_std: Option<f64>,
    pub truncate_low: Option<f64>,
    pub truncate_high: Option<f64>,

    // Grid rover.
    pub grid_size: Option<usize>,
    pub rock_count: Option<usize>,
    pub sensor_c: Option<f64>,
    pub layout_seed: Option<u64>,
}

/// A constructed environment, dispatched by match at the call site.
#[derive(Debug, Clone)]
pub enum ResolvedEnv {
    LightDark(LightDark),
    RockSample(RockSample),
}

impl ResolvedEnv {
    pub fn kind(&self) -> EnvKind {
        match self {
            ResolvedEnv::LightDark(_) => EnvKind::Lightdark,
            ResolvedEnv::RockSample(_) => EnvKind::Rocksample,
        }
    }
}

impl EnvSection {
    fn require<T: Copy>(opt: Option<T>, key: &str) -> Result<T, ConfigError> {
        opt.ok_or_else(|| invalid(format!("env.{key} is required for this env kind")))
    }

    fn forbid<T>(opt: &Option<T>, key: &str, kind: &str) -> Result<(), ConfigError> {
        if opt.is_some() {
            Err(invalid(format!("env.{key} does not apply to kind \"{kind}\"")))
        } else {
            Ok(())
        }
    }

    pub fn build(&self) -> Result<ResolvedEnv, ConfigError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid("env.gamma must lie in (0, 1]"));
        }
        if self.max_steps == 0 {
            return Err(invalid("env.max_steps must be at least 1"));
        }
        match self.kind {
            EnvKind::Lightdark => {
                for (opt, key) in [
                    (self.grid_size.map(|_| ()), "grid_size"),
                    (self.rock_count.map(|_| ()), "rock_count"),
                    (self.sensor_c.map(|_| ()), "sensor_c"),
                    (self.layout_seed.map(|_| ()), "layout_seed"),
                ] {
                    Self::forbid(&opt, key, "lightdark")?;
                }
                let light_y = Self::require(self.light_y, "light_y")?;
                let sigma_slope = Self::require(self.sigma_slope, "sigma_slope")?;
                let sigma_floor = Self::require(self.sigma_floor, "sigma_floor")?;
                let init_mean = Self::require(self.init_mean, "init_mean")?;
                let init_std = Self::require(self.init_std, "init_std")?;
                if sigma_slope <= 0.0 || sigma_floor <= 0.0 {
                    return Err(invalid("env.sigma_slope and env.sigma_floor must be positive"));
                }
                if init_std <= 0.0 {
                    return Err(invalid("env.init_std must be positive"));
                }
                let truncate = match (self.truncate_low, self.truncate_high) {
                    (Some(lo), Some(hi)) if lo < hi => Some((lo, hi)),
                    (Some(_), Some(_)) => {
                        return Err(invalid("env.truncate_low must be below env.truncate_high"))
                    }
                    (None, None) => None,
                    _ => {
                        return Err(invalid(
                            "env.truncate_low and env.truncate_high must be set together",
                        ))
                    }
                };
                Ok(ResolvedEnv::LightDark(LightDark {
                    light_y,
                    sigma_slope,
                    sigma_floor,
                    gamma: self.gamma,
                    max_steps: self.max_steps,
                    init_mean,
                    init_std,
                    truncate,
                }))
            }
            EnvKind::Rocksample => {
                for (opt, key) in [
                    (self.light_y.map(|_| ()), "light_y"),
                    (self.sigma_slope.map(|_| ()), "sigma_slope"),
                    (self.sigma_floor.map(|_| ()), "sigma_floor"),
                    (self.init_mean.map(|_| ()), "init_mean"),
                    (self.init_std.map(|_| ()), "init_std"),
                    (self.truncate_low.map(|_| ()), "truncate_low"),
                    (self.truncate_high.map(|_| ()), "truncate_high"),
                ] {
                    Self::forbid(&opt, key, "rocksample")?;
                }
                let n = Self::require(self.grid_size, "grid_size")?;
                let k = Self::require(self.rock_count, "rock_count")?;
                let sensor_c = Self::require(self.sensor_c, "sensor_c")?;
                let layout_seed = Self::require(self.layout_seed, "layout_seed")?;
                if n < 2 {
                    return Err(invalid("env.grid_size must be at least 2"));
                }
                if k == 0 || k > 32 || k > n * n {
                    return Err(invalid("env.rock_count must lie in 1..=min(32, grid_size^2)"));
                }
                if sensor_c <= 0.0 {
                    return Err(invalid("env.sensor_c must be positive"));
                }
                let mut env = RockSample::new(n, k, sensor_c, layout_seed);
                env.gamma = self.gamma;
                env.max_steps = self.max_steps;
                Ok(ResolvedEnv::RockSample(env))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Filter and network

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeliefSection {
    pub n_particles: usize,
    pub abc_sigma: Option<f64>,
}

impl BeliefSection {
    pub fn build(&self) -> Result<(usize, UpdateConfig), ConfigError> {
        if self.n_particles < 2 {
            return Err(invalid("belief.n_particles must be at least 2"));
        }
        if let Some(s) = self.abc_sigma {
            if s <= 0.0 {
                return Err(invalid("belief.abc_sigma must be positive"));
            }
        }
        Ok((self.n_particles, UpdateConfig { abc_sigma: self.abc_sigma }))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetSection {
    pub hidden_width: usize,
    pub trunk_layers: usize,
    pub batch_norm: bool,
    pub dropout: f64,
    /// "mean_std" or "mean_only".
    pub repr: String,
}

impl NetSection {
    pub fn repr_mode(&self) -> Result<ReprMode, ConfigError> {
        match self.repr.as_str() {
            "mean_std" => Ok(ReprMode::MeanStd),
            "mean_only" => Ok(ReprMode::MeanOnly),
            other => Err(invalid(format!(
                "net.repr must be \"mean_std\" or \"mean_only\", got \"{other}\""
            ))),
        }
    }

    pub fn build_arch<P: GenerativePomdp>(&self, pomdp: &P) -> Result<ArchSpec, ConfigError> {
        let mode = self.repr_mode()?;
        if self.hidden_width == 0 {
            return Err(invalid("net.hidden_width must be at least 1"));
        }
        if self.trunk_layers == 0 || self.trunk_layers > 8 {
            return Err(invalid("net.trunk_layers must lie in 1..=8"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(invalid("net.dropout must lie in [0, 1)"));
        }
        Ok(ArchSpec {
            input_dim: crate::belief::repr_dim(pomdp, mode),
            action_dim: pomdp.action_count(),
            hidden_width: self.hidden_width,
            trunk_layers: self.trunk_layers,
            batch_norm: self.batch_norm,
            dropout: self.dropout,
        })
    }
}

// ---------------------------------------------------------------------------
// Search

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    pub offline: Option<SearchParams>,
    pub online: Option<SearchParams>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchParams {
    pub n_online: usize,
    pub c: f64,
    pub depth: usize,
    pub tau: f64,
    pub z_q: f64,
    pub z_n: f64,
    pub k_action: Option<f64>,
    pub alpha_action: Option<f64>,
    pub k_state: Option<f64>,
    pub alpha_state: Option<f64>,
    pub bootstrap_q0: bool,
    /// "sample" or "argmax".
    pub final_criterion: String,
    /// "policy" or "uniform".
    pub widening_prior: String,
    pub renormalize_puct_prior: bool,
}

fn widening_pair(
    k: Option<f64>,
    alpha: Option<f64>,
    what: &str,
) -> Result<Option<Widening>, ConfigError> {
    match (k, alpha) {
        (Some(k), Some(alpha)) => {
            // k = 0 is the degenerate law: exactly one child, ever.
            if k < 0.0 {
                return Err(invalid(format!("{what}: k must be non-negative")));
            }
            if !(0.0..=1.0).contains(&alpha) {
                return Err(invalid(format!("{what}: alpha must lie in [0, 1]")));
            }
            Ok(Some(Widening { k, alpha }))
        }
        (None, None) => Ok(None),
        _ => Err(invalid(format!("{what}: k and alpha must be set together"))),
    }
}

impl SearchParams {
    pub fn build(&self, label: &str) -> Result<SearchConfig, ConfigError> {
        if self.n_online == 0 {
            return Err(invalid(format!("{label}.n_online must be at least 1")));
        }
        if self.depth == 0 {
            return Err(invalid(format!("{label}.depth must be at least 1")));
        }
        if self.c < 0.0 {
            return Err(invalid(format!("{label}.c must be non-negative")));
        }
        if self.tau < 0.0 {
            return Err(invalid(format!("{label}.tau must be non-negative")));
        }
        if self.z_q < 0.0 || self.z_n < 0.0 {
            return Err(invalid(format!("{label}.z_q and {label}.z_n must be non-negative")));
        }
        let final_criterion = match self.final_criterion.as_str() {
            "sample" => FinalCriterion::SamplePi,
            "argmax" => FinalCriterion::ArgmaxPi,
            other => {
                return Err(invalid(format!(
                    "{label}.final_criterion must be \"sample\" or \"argmax\", got \"{other}\""
                )))
            }
        };
        let widening_prior = match self.widening_prior.as_str() {
            "policy" => WideningPrior::Policy,
            "uniform" => WideningPrior::Uniform,
            other => {
                return Err(invalid(format!(
                    "{label}.widening_prior must be \"policy\" or \"uniform\", got \"{other}\""
                )))
            }
        };
        Ok(SearchConfig {
            n_online: self.n_online,
            c: self.c,
            depth: self.depth,
            tau: self.tau,
            z_q: self.z_q,
            z_n: self.z_n,
            action_widening: widening_pair(
                self.k_action,
                self.alpha_action,
                &format!("{label}.k_action/alpha_action"),
            )?,
            belief_widening: widening_pair(
                self.k_state,
                self.alpha_state,
                &format!("{label}.k_state/alpha_state"),
            )?,
            bootstrap_q0: self.bootstrap_q0,
            exploration: Exploration::Puct,
            widening_prior,
            final_criterion,
            renormalize_puct_prior: self.renormalize_puct_prior,
            rollout_depth: 0,
        })
    }
}

/// The search-free baseline: same tree mechanics, but UCT exploration and
/// random-rollout leaf evaluation instead of a network.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RolloutSection {
    pub n_online: usize,
    pub c: f64,
    pub depth: usize,
    pub rollout_depth: usize,
    pub k_action: Option<f64>,
    pub alpha_action: Option<f64>,
    pub k_state: Option<f64>,
    pub alpha_state: Option<f64>,
}

impl RolloutSection {
    pub fn build(&self) -> Result<SearchConfig, ConfigError> {
        if self.n_online == 0 || self.depth == 0 || self.rollout_depth == 0 {
            return Err(invalid(
                "rollout.n_online, rollout.depth, and rollout.rollout_depth must be at least 1",
            ));
        }
        if self.c <= 0.0 {
            return Err(invalid("rollout.c must be positive"));
        }
        Ok(SearchConfig {
            n_online: self.n_online,
            c: self.c,
            depth: self.depth,
            // The recorded tree policy is the visit distribution.
            tau: 1.0,
            z_q: 0.0,
            z_n: 1.0,
            action_widening: widening_pair(
                self.k_action,
                self.alpha_action,
                "rollout.k_action/alpha_action",
            )?,
            belief_widening: widening_pair(
                self.k_state,
                self.alpha_state,
                "rollout.k_state/alpha_state",
            )?,
            bootstrap_q0: false,
            exploration: Exploration::Uct,
            widening_prior: WideningPrior::Uniform,
            final_criterion: FinalCriterion::RobustChild,
            renormalize_puct_prior: false,
            rollout_depth: self.rollout_depth,
        })
    }
}

// ---------------------------------------------------------------------------
// Trainer and outer loop

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub batch_size: usize,
    pub train_fraction: f64,
    /// "adam" or "rmsprop".
    pub optimizer: OptimizerKind,
    /// "mse" or "mae".
    pub value_loss: ValueLoss,
    pub bn_momentum: f64,
}

impl TrainSection {
    pub fn build(&self) -> Result<TrainConfig, ConfigError> {
        if self.epochs == 0 {
            return Err(invalid("train.epochs must be at least 1"));
        }
        if self.learning_rate <= 0.0 {
            return Err(invalid("train.learning_rate must be positive"));
        }
        if self.l2 < 0.0 {
            return Err(invalid("train.l2 must be non-negative"));
        }
        if self.batch_size == 0 {
            return Err(invalid("train.batch_size must be at least 1"));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return Err(invalid("train.train_fraction must lie in (0, 1]"));
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            return Err(invalid("train.bn_momentum must lie in (0, 1]"));
        }
        Ok(TrainConfig {
            epochs: self.epochs,
            learning_rate: self.learning_rate,
            l2: self.l2,
            batch_size: self.batch_size,
            train_fraction: self.train_fraction,
            optimizer: self.optimizer,
            value_loss: self.value_loss,
            bn_momentum: self.bn_momentum,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfPlaySection {
    pub n_iterations: usize,
    pub n_data: usize,
    pub holdout_episodes: usize,
    pub buffer_capacity: usize,
    pub n_buffer: usize,
    pub max_drop_fraction: f64,
}

impl SelfPlaySection {
    pub fn build(&self) -> Result<SelfPlayConfig, ConfigError> {
        if self.n_iterations == 0
            || self.n_data == 0
            || self.holdout_episodes == 0
            || self.buffer_capacity == 0
            || self.n_buffer == 0
        {
            return Err(invalid("all [selfplay] counts must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.max_drop_fraction) {
            return Err(invalid("selfplay.max_drop_fraction must lie in [0, 1]"));
        }
        Ok(SelfPlayConfig {
            n_iterations: self.n_iterations,
            n_data: self.n_data,
            holdout_episodes: self.holdout_episodes,
            buffer_capacity: self.buffer_capacity,
            n_buffer: self.n_buffer,
            max_drop_fraction: self.max_drop_fraction,
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub n_seeds: usize,
    /// Observation draws per action for the value-head lookahead policy.
    pub raw_value_observations: usize,
}

impl EvalSection {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_seeds == 0 {
            return Err(invalid("eval.n_seeds must be at least 1"));
        }
        if self.raw_value_observations == 0 {
            return Err(invalid("eval.raw_value_observations must be at least 1"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Optional tools

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaviSection {
    pub mean_min: f64,
    pub mean_max: f64,
    pub std_min: f64,
    pub std_max: f64,
    pub grid_points: usize,
    pub samples_per_point: usize,
    pub sweeps: usize,
    pub residual_tol: f64,
    pub reconstruction_particles: usize,
    pub eval_samples_per_action: usize,
}

impl LaviSection {
    pub fn build(&self) -> Result<LaviConfig, ConfigError> {
        if self.grid_points < 2 {
            return Err(invalid("lavi.grid_points must be at least 2"));
        }
        if self.samples_per_point == 0 || self.sweeps == 0 || self.eval_samples_per_action == 0 {
            return Err(invalid("all [lavi] sample and sweep counts must be at least 1"));
        }
        if self.reconstruction_particles < 2 {
            return Err(invalid("lavi.reconstruction_particles must be at least 2"));
        }
        if self.residual_tol <= 0.0 {
            return Err(invalid("lavi.residual_tol must be positive"));
        }
        if self.mean_min >= self.mean_max {
            return Err(invalid("lavi.mean_min must be below lavi.mean_max"));
        }
        if !(self.std_min >= 0.0 && self.std_min < self.std_max) {
            return Err(invalid("lavi std axis must satisfy 0 <= std_min < std_max"));
        }
        Ok(LaviConfig {
            mean_min: self.mean_min,
            mean_max: self.mean_max,
            std_min: self.std_min,
            std_max: self.std_max,
            grid_points: self.grid_points,
            samples_per_point: self.samples_per_point,
            sweeps: self.sweeps,
            residual_tol: self.residual_tol,
            reconstruction_particles: self.reconstruction_particles,
            eval_samples_per_action: self.eval_samples_per_action,
        })
    }
}

/// Grid sweep over one widening law's `(k, alpha)`, evaluated with the
/// online search settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub n_seeds: usize,
    pub k_min: f64,
    pub k_max: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    /// Points per axis; the sweep covers `grid_points^2` cells.
    pub grid_points: usize,
}

impl SweepSection {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.n_seeds == 0 {
            return Err(invalid("sweep.n_seeds must be at least 1"));
        }
        if self.grid_points < 2 {
            return Err(invalid("sweep.grid_points must be at least 2"));
        }
        if !(self.k_min >= 0.0 && self.k_min <= self.k_max) {
            return Err(invalid("sweep k range must satisfy 0 <= k_min <= k_max"));
        }
        if !(self.alpha_min >= 0.0 && self.alpha_min <= self.alpha_max && self.alpha_max <= 1.0) {
            return Err(invalid("sweep alpha range must satisfy 0 <= alpha_min <= alpha_max <= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblateSection {
    /// Points per axis of the policy-target exponent grid over [0, 1].
    pub z_grid_points: usize,
    pub n_seeds: usize,
}

impl AblateSection {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.z_grid_points < 2 {
            return Err(invalid("ablate.z_grid_points must be at least 2"));
        }
        if self.n_seeds == 0 {
            return Err(invalid("ablate.n_seeds must be at least 1"));
        }
        Ok(())
    }
}
