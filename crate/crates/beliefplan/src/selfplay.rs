//! Policy iteration: parallel data collection with the current network,
//! supervised training on tree-policy targets, and holdout evaluation.
//!
//! Every episode gets a seed derived from the master seed, the iteration
//! index, and its slot, so a run is reproducible regardless of how rayon
//! schedules the work. Episode results are merged in slot order before any
//! sequential reduction.

use std::time::Instant;

use rayon::prelude::*;

use crate::belief::{represent, ParticleBelief, ReprMode, UpdateConfig};
use crate::error::SelfPlayError;
use crate::mcts::{self, FinalCriterion, Guide, SearchConfig};
use crate::nnet::{self, ArchSpec, Net, TrainConfig, TrainSample};
use crate::pomdp::{
    run_episode, ActionIndex, ActionSelector, EpisodeRecord, GenerativePomdp,
};
use crate::rng::{self, tags};

/// Environment plus the belief-filter settings every component shares.
pub struct Harness<'a, P: GenerativePomdp> {
    pub pomdp: &'a P,
    pub n_particles: usize,
    pub update_cfg: UpdateConfig,
    pub repr_mode: ReprMode,
}

/// Tree search guided by a network.
pub struct SearchSelector<'a, P: GenerativePomdp> {
    pub pomdp: &'a P,
    pub net: &'a Net,
    pub cfg: &'a SearchConfig,
    pub update_cfg: UpdateConfig,
    pub repr_mode: ReprMode,
}

impl<'a, P: GenerativePomdp> ActionSelector<P> for SearchSelector<'a, P> {
    fn select(&self, belief: &ParticleBelief<P::State>, seed: u64) -> (ActionIndex, Vec<f64>) {
        let out = mcts::plan(
            self.pomdp,
            &Guide::Network(self.net),
            belief,
            &self.update_cfg,
            self.repr_mode,
            self.cfg,
            seed,
            false,
        );
        (out.action, out.pi)
    }
}

/// Tree search with random-rollout leaf values (no network anywhere).
pub struct RolloutSelector<'a, P: GenerativePomdp> {
    pub pomdp: &'a P,
    pub cfg: &'a SearchConfig,
    pub update_cfg: UpdateConfig,
    pub repr_mode: ReprMode,
}

impl<'a, P: GenerativePomdp> ActionSelector<P> for RolloutSelector<'a, P> {
    fn select(&self, belief: &ParticleBelief<P::State>, seed: u64) -> (ActionIndex, Vec<f64>) {
        let out = mcts::plan(
            self.pomdp,
            &Guide::Rollout,
            belief,
            &self.update_cfg,
            self.repr_mode,
            self.cfg,
            seed,
            false,
        );
        (out.action, out.pi)
    }
}

/// Acts directly from the policy head: argmax of the prior, no search.
pub struct RawPolicySelector<'a, P: GenerativePomdp> {
    pub pomdp: &'a P,
    pub net: &'a Net,
    pub repr_mode: ReprMode,
}

impl<'a, P: GenerativePomdp> ActionSelector<P> for RawPolicySelector<'a, P> {
    fn select(&self, belief: &ParticleBelief<P::State>, _seed: u64) -> (ActionIndex, Vec<f64>) {
        let repr = represent(self.pomdp, belief, self.repr_mode);
        let (pi, _) = self.net.eval(&repr);
        (mcts::argmax_lowest(&pi), pi)
    }
}

/// Acts from the value head via a one-step lookahead: for each action draw a
/// handful of observations, update a scratch belief per draw, and average the
/// predicted successor values. Performs exactly
/// `action_count * observations_per_action` belief updates per decision.
pub struct RawValueSelector<'a, P: GenerativePomdp> {
    pub pomdp: &'a P,
    pub net: &'a Net,
    pub update_cfg: UpdateConfig,
    pub repr_mode: ReprMode,
    pub observations_per_action: usize,
}

impl<'a, P: GenerativePomdp> RawValueSelector<'a, P> {
    /// Lookahead action values and the number of belief updates performed.
    pub fn action_values(&self, belief: &ParticleBelief<P::State>, seed: u64) -> (Vec<f64>, usize) {
        use rand::RngCore;
        let pomdp = self.pomdp;
        let gamma = pomdp.discount();
        let mut rng = rng::seeded(&[seed, tags::EVAL]);
        let mut b = belief.reseeded(rng.next_u64());
        let mut updates = 0;
        let q = (0..pomdp.action_count())
            .map(|action| {
                let r = crate::belief::belief_reward(pomdp, &b, action, &mut rng);
                let mut acc = 0.0;
                for _ in 0..self.observations_per_action {
                    let s = b.sample_state();
                    let next = pomdp.step(&s, action, &mut rng);
                    let obs = pomdp.observe(action, &next, &mut rng);
                    let mut child = b.reseeded(rng.next_u64());
                    let updated = child.update(pomdp, action, &obs, &self.update_cfg);
                    updates += 1;
                    // Terminal draws and depleted updates contribute no
                    // successor value; the update itself still counts.
                    if updated.is_ok() && !pomdp.is_terminal(&next) {
                        let repr = represent(pomdp, &child, self.repr_mode);
                        let (_, v) = self.net.eval(&repr);
                        acc += v;
                    }
                }
                r + gamma * acc / self.observations_per_action as f64
            })
            .collect::<Vec<f64>>();
        (q, updates)
    }
}

impl<'a, P: GenerativePomdp> ActionSelector<P> for RawValueSelector<'a, P> {
    fn select(&self, belief: &ParticleBelief<P::State>, seed: u64) -> (ActionIndex, Vec<f64>) {
        let (q, _) = self.action_values(belief, seed);
        let best = mcts::argmax_lowest(&q);
        let mut pi = vec![0.0; q.len()];
        pi[best] = 1.0;
        (best, pi)
    }
}

/// Aggregate of an evaluation run. `returns` is ordered by episode slot and
/// holds `(seed, discounted_return)` for episodes that completed.
#[derive(Debug, Clone)]
pub struct EvalResult {
    pub returns: Vec<(u64, f64)>,
    pub dropped: usize,
    pub mean: f64,
    /// Standard error of the mean (sample std over sqrt n).
    pub std_err: f64,
}

fn summarize(returns: Vec<(u64, f64)>, dropped: usize) -> EvalResult {
    let n = returns.len();
    let mean = if n == 0 {
        f64::NAN
    } else {
        returns.iter().map(|(_, g)| g).sum::<f64>() / n as f64
    };
    let std_err = if n >= 2 {
        let var = returns.iter().map(|(_, g)| (g - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        (var / n as f64).sqrt()
    } else {
        0.0
    };
    EvalResult { returns, dropped, mean, std_err }
}

/// Run `n_seeds` episodes under `selector` in parallel. Episode `i` uses the
/// seed `mix([master_seed, tag, i])`; failed episodes (particle depletion)
/// are counted as dropped and excluded from the mean.
pub fn evaluate<P: GenerativePomdp>(
    harness: &Harness<'_, P>,
    selector: &(dyn ActionSelector<P> + Sync),
    n_seeds: usize,
    master_seed: u64,
    tag: u64,
) -> EvalResult {
    let episodes: Vec<(u64, Result<EpisodeRecord, _>)> = (0..n_seeds)
        .into_par_iter()
        .map(|i| {
            let seed = rng::mix(&[master_seed, tag, i as u64]);
            let rec = run_episode(
                harness.pomdp,
                selector,
                harness.n_particles,
                &harness.update_cfg,
                harness.repr_mode,
                seed,
            );
            (seed, rec)
        })
        .collect();
    let mut returns = Vec::with_capacity(n_seeds);
    let mut dropped = 0;
    for (seed, rec) in episodes {
        match rec {
            Ok(r) => returns.push((seed, r.total_return)),
            Err(_) => dropped += 1,
        }
    }
    summarize(returns, dropped)
}

/// One iteration's worth of collected experience.
#[derive(Debug)]
pub struct CollectStats {
    pub samples: Vec<TrainSample>,
    pub episodes_completed: usize,
    pub dropped: usize,
    /// Mean discounted return of the completed episodes.
    pub mean_return: f64,
}

/// Play `n_data` self-play episodes with the search selector and flatten the
/// visited decisions into training samples. Episode `i` of iteration `it`
/// uses seed `mix([master_seed, COLLECT, (it * n_data + i)])`. Fails with
/// [`SelfPlayError::Starvation`] when more than `max_drop_fraction` of the
/// episodes die to particle depletion.
pub fn collect_data<P: GenerativePomdp>(
    harness: &Harness<'_, P>,
    net: &Net,
    search_cfg: &SearchConfig,
    n_data: usize,
    iteration: usize,
    master_seed: u64,
    max_drop_fraction: f64,
) -> Result<CollectStats, SelfPlayError> {
    let selector = SearchSelector {
        pomdp: harness.pomdp,
        net,
        cfg: search_cfg,
        update_cfg: harness.update_cfg.clone(),
        repr_mode: harness.repr_mode,
    };
    let episodes: Vec<Result<EpisodeRecord, _>> = (0..n_data)
        .into_par_iter()
        .map(|i| {
            let slot = (iteration * n_data + i) as u64;
            let seed = rng::mix(&[master_seed, tags::COLLECT, slot]);
            run_episode(
                harness.pomdp,
                &selector,
                harness.n_particles,
                &harness.update_cfg,
                harness.repr_mode,
                seed,
            )
        })
        .collect();

    let dropped = episodes.iter().filter(|r| r.is_err()).count();
    if dropped as f64 > max_drop_fraction * n_data as f64 {
        return Err(SelfPlayError::Starvation {
            dropped,
            total: n_data,
            limit_percent: max_drop_fraction * 100.0,
        });
    }

    let mut samples = Vec::new();
    let mut sum = 0.0;
    let mut completed = 0;
    for rec in episodes.into_iter().flatten() {
        completed += 1;
        sum += rec.total_return;
        for step in rec.steps {
            samples.push(TrainSample { repr: step.repr, pi: step.pi, g: step.g });
        }
    }
    let mean_return = if completed > 0 { sum / completed as f64 } else { f64::NAN };
    Ok(CollectStats { samples, episodes_completed: completed, dropped, mean_return })
}

/// Sliding window over recent iterations of experience. Training draws from
/// the last `n_recent` iterations, truncated to the `capacity` most recent
/// samples.
pub struct ExperienceBuffer {
    capacity: usize,
    n_recent: usize,
    iterations: std::collections::VecDeque<Vec<TrainSample>>,
}

impl ExperienceBuffer {
    pub fn new(capacity: usize, n_recent: usize) -> Self {
        assert!(capacity >= 1 && n_recent >= 1);
        Self { capacity, n_recent, iterations: std::collections::VecDeque::new() }
    }

    pub fn push_iteration(&mut self, samples: Vec<TrainSample>) {
        self.iterations.push_back(samples);
        while self.iterations.len() > self.n_recent {
            self.iterations.pop_front();
        }
    }

    /// Samples eligible for the next training call, oldest first.
    pub fn training_set(&self) -> Vec<TrainSample> {
        let total: usize = self.iterations.iter().map(Vec::len).sum();
        let skip = total.saturating_sub(self.capacity);
        self.iterations
            .iter()
            .flat_map(|v| v.iter())
            .skip(skip)
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        let total: usize = self.iterations.iter().map(Vec::len).sum();
        total.min(self.capacity)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Knobs of the outer policy-iteration loop.
#[derive(Debug, Clone)]
pub struct SelfPlayConfig {
    pub n_iterations: usize,
    /// Episodes collected per iteration.
    pub n_data: usize,
    pub holdout_episodes: usize,
    pub buffer_capacity: usize,
    /// Number of most recent iterations the buffer keeps.
    pub n_buffer: usize,
    pub max_drop_fraction: f64,
}

/// Per-iteration log row.
#[derive(Debug, Clone)]
pub struct IterationMetrics {
    pub iteration: usize,
    pub mean_holdout_return: f64,
    pub std_err: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub val_policy_loss: f64,
    pub val_value_loss: f64,
    pub buffer_size: usize,
    pub collect_mean_return: f64,
    pub dropped_episodes: usize,
    pub wall_clock_seconds: f64,
}

pub struct PolicyIterationOutput {
    pub net: Net,
    pub metrics: Vec<IterationMetrics>,
}

/// Full training loop: repeat collect-train-evaluate from a freshly
/// initialized network. `on_iteration` fires after each iteration with the
/// current network and its metrics row (for checkpointing and logging).
#[allow(clippy::too_many_arguments)]
pub fn policy_iteration<P: GenerativePomdp>(
    harness: &Harness<'_, P>,
    arch: &ArchSpec,
    offline_cfg: &SearchConfig,
    train_cfg: &TrainConfig,
    sp: &SelfPlayConfig,
    master_seed: u64,
    mut on_iteration: impl FnMut(&Net, &IterationMetrics),
) -> Result<PolicyIterationOutput, SelfPlayError> {
    let mut net = Net::new(arch.clone(), master_seed);
    let mut buffer = ExperienceBuffer::new(sp.buffer_capacity, sp.n_buffer);
    let mut metrics = Vec::with_capacity(sp.n_iterations);

    let mut holdout_cfg = offline_cfg.clone();
    holdout_cfg.final_criterion = FinalCriterion::ArgmaxPi;

    for iteration in 0..sp.n_iterations {
        let started = Instant::now();

        let collected = collect_data(
            harness,
            &net,
            offline_cfg,
            sp.n_data,
            iteration,
            master_seed,
            sp.max_drop_fraction,
        )?;
        let collect_mean_return = collected.mean_return;
        let dropped_episodes = collected.dropped;

        // Input and return statistics fold in everything ever collected;
        // they are frozen during gradient steps and stored in checkpoints.
        for s in &collected.samples {
            net.input_stats.fold(&s.repr);
            net.return_stats.fold(&[s.g]);
        }
        buffer.push_iteration(collected.samples);

        let training_set = buffer.training_set();
        let report = nnet::train(
            &mut net,
            &training_set,
            train_cfg,
            rng::mix(&[master_seed, tags::TRAIN, iteration as u64]),
        )?;

        let holdout_selector = SearchSelector {
            pomdp: harness.pomdp,
            net: &net,
            cfg: &holdout_cfg,
            update_cfg: harness.update_cfg.clone(),
            repr_mode: harness.repr_mode,
        };
        let holdout = evaluate(
            harness,
            &holdout_selector,
            sp.holdout_episodes,
            rng::mix(&[master_seed, tags::HOLDOUT, iteration as u64]),
            tags::HOLDOUT,
        );

        let row = IterationMetrics {
            iteration,
            mean_holdout_return: holdout.mean,
            std_err: holdout.std_err,
            policy_loss: report.policy_loss,
            value_loss: report.value_loss,
            val_policy_loss: report.val_policy_loss,
            val_value_loss: report.val_value_loss,
            buffer_size: training_set.len(),
            collect_mean_return,
            dropped_episodes,
            wall_clock_seconds: started.elapsed().as_secs_f64(),
        };
        on_iteration(&net, &row);
        metrics.push(row);
    }

    Ok(PolicyIterationOutput { net, metrics })
}
