//! Generative POMDP interface, discounted returns, and episode rollout.
//!
//! Environments implement [`GenerativePomdp`]; planners implement
//! [`ActionSelector`]. [`run_episode`] connects the two: it steps the true
//! process, keeps a particle belief in sync, and records per-decision
//! training samples.

use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::belief::{represent, ParticleBelief, ReprMode, UpdateConfig};
use crate::error::EpisodeError;
use crate::rng;

/// Sampling interface to a POMDP. All stochastic methods draw from the
/// caller's generator so episodes are a pure function of their seed.
pub trait GenerativePomdp: Send + Sync {
    type State: Clone + Send + Sync + std::fmt::Debug;
    type Observation: Clone + Send + Sync + std::fmt::Debug;

    fn action_count(&self) -> usize;
    fn discount(&self) -> f64;
    /// Episode length cap; reaching it truncates without a terminal state.
    fn max_steps(&self) -> usize;

    fn sample_initial(&self, rng: &mut ChaCha8Rng) -> Self::State;
    fn step(&self, s: &Self::State, action: usize, rng: &mut ChaCha8Rng) -> Self::State;
    fn observe(&self, action: usize, next: &Self::State, rng: &mut ChaCha8Rng) -> Self::Observation;
    fn reward(&self, s: &Self::State, action: usize, next: &Self::State) -> f64;

    /// Density of `obs` given the action taken and the next state.
    fn observation_density(&self, obs: &Self::Observation, action: usize, next: &Self::State) -> f64;

    /// Log density; override when the density under- or overflows.
    fn observation_log_density(
        &self,
        obs: &Self::Observation,
        action: usize,
        next: &Self::State,
    ) -> f64 {
        self.observation_density(obs, action, next).ln()
    }

    fn is_terminal(&self, s: &Self::State) -> bool;

    /// True when `reward` ignores the next state; the belief reward is then
    /// an exact weighted sum instead of a one-sample estimate per particle.
    fn reward_is_state_action(&self) -> bool {
        true
    }

    /// Per-particle summary features (means and stds are taken over these).
    fn feature_dim(&self) -> usize;
    fn state_features(&self, s: &Self::State, out: &mut Vec<f64>);

    /// Features identical across particles (e.g. a fully observed pose),
    /// appended verbatim after the summary statistics.
    fn appended_dim(&self) -> usize {
        0
    }
    fn appended_features(&self, _anchor: &Self::State, _out: &mut Vec<f64>) {}

    /// Observation as a numeric vector, for kernel (ABC) reweighting.
    fn observation_features(&self, obs: &Self::Observation, out: &mut Vec<f64>);
}

/// Zero-indexed action.
pub type ActionIndex = usize;

/// Backward recursion g_t = r_t + gamma * g_{t+1}, with g after the final
/// step equal to zero.
pub fn discounted_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, &r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[i] = acc;
    }
    out
}

/// One decision from an episode: the belief summary the agent saw, the tree
/// policy it produced, the realized reward, and (after finalize) the
/// discounted return from this step.
#[derive(Debug, Clone)]
pub struct StepSample {
    pub repr: Vec<f64>,
    pub pi: Vec<f64>,
    pub action: ActionIndex,
    pub reward: f64,
    pub g: f64,
}

/// A completed episode.
#[derive(Debug, Clone)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub steps: Vec<StepSample>,
    /// Discounted return from the first step.
    pub total_return: f64,
}

/// Chooses an action for a belief. `seed` is the per-decision stream; the
/// selector must not depend on any other mutable state so that episodes are
/// replayable.
pub trait ActionSelector<P: GenerativePomdp>: Sync {
    fn select(&self, belief: &ParticleBelief<P::State>, seed: u64) -> (ActionIndex, Vec<f64>);
}

impl<P, F> ActionSelector<P> for F
where
    P: GenerativePomdp,
    F: Fn(&ParticleBelief<P::State>, u64) -> (ActionIndex, Vec<f64>) + Sync,
{
    fn select(&self, belief: &ParticleBelief<P::State>, seed: u64) -> (ActionIndex, Vec<f64>) {
        self(belief, seed)
    }
}

/// Run one episode of the true POMDP under `selector`, maintaining the
/// particle belief with `update_cfg`. Returns the recorded decisions with
/// discounted returns filled in.
pub fn run_episode<P: GenerativePomdp>(
    pomdp: &P,
    selector: &dyn ActionSelector<P>,
    n_particles: usize,
    update_cfg: &UpdateConfig,
    repr_mode: ReprMode,
    seed: u64,
) -> Result<EpisodeRecord, EpisodeError> {
    let mut rng = rng::seeded(&[seed]);
    let mut state = pomdp.sample_initial(&mut rng);
    let belief_rng = rng::seeded(&[rng.next_u64()]);
    let mut belief = ParticleBelief::from_initial(pomdp, n_particles, belief_rng);

    let mut steps: Vec<StepSample> = Vec::new();
    let mut rewards: Vec<f64> = Vec::new();

    for t in 0..pomdp.max_steps() {
        let repr = represent(pomdp, &belief, repr_mode);
        let (action, pi) = selector.select(&belief, rng.next_u64());
        let next = pomdp.step(&state, action, &mut rng);
        let reward = pomdp.reward(&state, action, &next);
        steps.push(StepSample {
            repr,
            pi,
            action,
            reward,
            g: 0.0,
        });
        rewards.push(reward);
        if pomdp.is_terminal(&next) {
            break;
        }
        let obs = pomdp.observe(action, &next, &mut rng);
        belief
            .update(pomdp, action, &obs, update_cfg)
            .map_err(|source| EpisodeError { step: t, source })?;
        state = next;
    }

    let returns = discounted_returns(&rewards, pomdp.discount());
    for (s, &g) in steps.iter_mut().zip(returns.iter()) {
        s.g = g;
    }
    let total_return = returns.first().copied().unwrap_or(0.0);
    Ok(EpisodeRecord {
        seed,
        steps,
        total_return,
    })
}
