//! Belief-state planning with learned guidance.
//!
//! The crate implements online tree search over particle-filter beliefs with
//! double progressive widening, guided by a two-head policy/value network
//! that is trained by policy iteration on its own search statistics. It
//! ships two benchmark environments (a one-dimensional localization task and
//! a grid rover with noisy rock sensing), a grid-based approximate value
//! iteration reference solver, and a rollout-based search baseline.
//!
//! Modules, roughly bottom-up:
//!
//! - [`rng`]: seed mixing; every source of randomness is derived from a
//!   master seed so runs are exactly reproducible.
//! - [`pomdp`]: the generative-model trait, episode runner, and returns.
//! - [`belief`]: bootstrap particle filter, resampling, belief summaries.
//! - [`envs`]: the two benchmark environments.
//! - [`nnet`]: the two-head network, its optimizer, and checkpointing.
//! - [`mcts`]: progressive-widening tree search (network- or rollout-guided).
//! - [`lavi`]: approximate value iteration on a belief-summary grid.
//! - [`selfplay`]: data collection, the experience window, policy iteration.
//! - [`config`]: strict TOML run configuration.

pub mod belief;
pub mod config;
pub mod envs;
pub mod error;
pub mod lavi;
pub mod mcts;
pub mod nnet;
pub mod pomdp;
pub mod rng;
pub mod selfplay;

pub use belief::{ParticleBelief, ReprMode, UpdateConfig};
pub use error::{BeliefError, ConfigError, EpisodeError, SelfPlayError, TrainError};
pub use mcts::{FinalCriterion, Guide, PlanOutcome, SearchConfig, Widening};
pub use nnet::{ArchSpec, Net, TrainConfig, TrainSample};
pub use pomdp::{ActionIndex, ActionSelector, GenerativePomdp};
