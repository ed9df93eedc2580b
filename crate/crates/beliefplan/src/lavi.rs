//! Approximate value iteration over a two-dimensional belief-summary grid.
//!
//! For the one-dimensional localization environment a particle belief is well
//! summarized by its mean and standard deviation. This module discretizes that
//! summary space into a regular grid, runs sampled Bellman backups at every
//! grid point until the sup-norm residual stalls, and exposes the result both
//! as a lookup table and as a greedy policy usable by [`crate::pomdp::run_episode`].
//!
//! The solver is exact enough to serve as a reference policy: backups draw
//! fresh generative samples per point and per sweep, and successor values are
//! read through clamped bilinear interpolation so that beliefs falling outside
//! the grid are projected onto its boundary.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::belief::{represent, ParticleBelief, ReprMode, UpdateConfig};
use crate::envs::LightDark;
use crate::pomdp::{ActionIndex, ActionSelector, GenerativePomdp};
use crate::rng::{self, tags};

/// Solver parameters. Axis bounds are inclusive on both ends.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LaviConfig {
    pub mean_min: f64,
    pub mean_max: f64,
    pub std_min: f64,
    pub std_max: f64,
    /// Grid points per axis.
    pub grid_points: usize,
    /// Generative samples per action during backups.
    pub samples_per_point: usize,
    /// Maximum number of full-grid sweeps.
    pub sweeps: usize,
    /// Stop early once the sup-norm change of a sweep drops below this.
    pub residual_tol: f64,
    /// Particles used to reconstruct a belief from a grid point.
    pub reconstruction_particles: usize,
    /// Fresh samples per action when the solved grid acts as a policy.
    pub eval_samples_per_action: usize,
}

impl Default for LaviConfig {
    fn default() -> Self {
        Self {
            mean_min: -3.0,
            mean_max: 12.0,
            std_min: 0.0,
            std_max: 5.0,
            grid_points: 25,
            samples_per_point: 100,
            sweeps: 25,
            residual_tol: 1e-3,
            reconstruction_particles: 500,
            eval_samples_per_action: 100,
        }
    }
}

/// Solved value grid. `values` and `best_actions` are row-major with the mean
/// axis outer: index `i * stds.len() + j` holds the entry for `(means[i], stds[j])`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BeliefGrid {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
    pub values: Vec<f64>,
    pub best_actions: Vec<ActionIndex>,
    /// Sup-norm residual after each completed sweep, in order.
    pub residuals: Vec<f64>,
}

impl BeliefGrid {
    /// Indices of the grid point nearest to `(mean, std)`.
    pub fn nearest(&self, mean: f64, std: f64) -> (usize, usize) {
        (nearest_axis(&self.means, mean), nearest_axis(&self.stds, std))
    }

    pub fn value_at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.stds.len() + j]
    }

    pub fn best_action_at(&self, i: usize, j: usize) -> ActionIndex {
        self.best_actions[i * self.stds.len() + j]
    }
}

fn nearest_axis(axis: &[f64], x: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, &v) in axis.iter().enumerate() {
        let d = (v - x).abs();
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2, "axis needs at least two points");
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Clamped bilinear interpolation of `values` (layout as in [`BeliefGrid`])
/// at the query `(mean, std)`. Queries outside the axis ranges are projected
/// onto the boundary before interpolating.
pub fn interpolate(means: &[f64], stds: &[f64], values: &[f64], mean: f64, std: f64) -> f64 {
    let (i0, i1, tm) = bracket(means, mean);
    let (j0, j1, ts) = bracket(stds, std);
    let n = stds.len();
    let v00 = values[i0 * n + j0];
    let v01 = values[i0 * n + j1];
    let v10 = values[i1 * n + j0];
    let v11 = values[i1 * n + j1];
    let lo = v00 + (v01 - v00) * ts;
    let hi = v10 + (v11 - v10) * ts;
    lo + (hi - lo) * tm
}

/// Bracketing cell along one axis: returns `(lower, upper, fraction)` with
/// the query clamped into the axis range. Axes are uniformly spaced.
fn bracket(axis: &[f64], x: f64) -> (usize, usize, f64) {
    let n = axis.len();
    let lo = axis[0];
    let hi = axis[n - 1];
    let x = x.clamp(lo, hi);
    let step = (hi - lo) / (n - 1) as f64;
    let pos = (x - lo) / step;
    let i0 = (pos.floor() as usize).min(n - 2);
    let t = (pos - i0 as f64).clamp(0.0, 1.0);
    (i0, i0 + 1, t)
}

/// Draw a particle belief whose summary matches a grid point: particle
/// positions are sampled from a Gaussian with the given mean and std.
fn reconstruct(
    _env: &LightDark,
    mean: f64,
    std: f64,
    n_particles: usize,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> ParticleBelief<crate::envs::LdState> {
    use rand::{Rng, RngCore};
    use rand_distr::StandardNormal;
    let particles: Vec<_> = (0..n_particles)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            crate::envs::LdState { y: mean + std * z, stopped: false }
        })
        .collect();
    ParticleBelief::from_particles(particles, rng::seeded(&[rng.next_u64()]))
}

/// One sampled Bellman backup at `(mean, std)` against the previous sweep's
/// `values`. Returns the backed-up value and its greedy action.
#[allow(clippy::too_many_arguments)]
fn point_backup(
    env: &LightDark,
    cfg: &LaviConfig,
    update_cfg: &UpdateConfig,
    means: &[f64],
    stds: &[f64],
    values: &[f64],
    mean: f64,
    std: f64,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> (f64, ActionIndex) {
    use rand::RngCore;
    let belief = reconstruct(env, mean, std, cfg.reconstruction_particles, rng);
    let gamma = env.discount();
    let mut best_q = f64::NEG_INFINITY;
    let mut best_a = 0;
    for action in 0..env.action_count() {
        let mut acc = 0.0;
        let mut b = belief.reseeded(rng.next_u64());
        for _ in 0..cfg.samples_per_point {
            let state = b.sample_state();
            let next = env.step(&state, action, rng);
            let r = env.reward(&state, action, &next);
            if env.is_terminal(&next) {
                acc += r;
                continue;
            }
            let obs = env.observe(action, &next, rng);
            let mut child = b.reseeded(rng.next_u64());
            let summary = match child.update(env, action, &obs, update_cfg) {
                Ok(()) => {
                    let phi = represent(env, &child, ReprMode::MeanStd);
                    (phi[0], phi[1])
                }
                // Depleted updates are rare here because the belief was just
                // reconstructed around this grid point; fall back to the
                // point's own summary rather than aborting the sweep.
                Err(_) => (mean, std),
            };
            acc += r + gamma * interpolate(means, stds, values, summary.0, summary.1);
        }
        let q = acc / cfg.samples_per_point as f64;
        if q > best_q {
            best_q = q;
            best_a = action;
        }
    }
    (best_q, best_a)
}

/// Solve the belief-summary grid by repeated sampled sweeps.
///
/// Every `(sweep, point)` pair gets its own deterministic RNG stream, so the
/// result is independent of thread scheduling.
pub fn solve(
    env: &LightDark,
    cfg: &LaviConfig,
    update_cfg: &UpdateConfig,
    seed: u64,
) -> BeliefGrid {
    let means = linspace(cfg.mean_min, cfg.mean_max, cfg.grid_points);
    let stds = linspace(cfg.std_min, cfg.std_max, cfg.grid_points);
    let n = cfg.grid_points;
    let mut values = vec![0.0; n * n];
    let mut best_actions = vec![0; n * n];
    let mut residuals = Vec::new();

    for sweep in 0..cfg.sweeps {
        let backed: Vec<(f64, ActionIndex)> = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let i = idx / n;
                let j = idx % n;
                let mut rng =
                    rng::seeded(&[seed, tags::LAVI, sweep as u64, idx as u64]);
                point_backup(
                    env, cfg, update_cfg, &means, &stds, &values, means[i], stds[j], &mut rng,
                )
            })
            .collect();
        let mut residual = 0.0f64;
        for (idx, (v, a)) in backed.into_iter().enumerate() {
            residual = residual.max((v - values[idx]).abs());
            values[idx] = v;
            best_actions[idx] = a;
        }
        residuals.push(residual);
        if residual < cfg.residual_tol {
            break;
        }
    }

    BeliefGrid { means, stds, values, best_actions, residuals }
}

/// Greedy policy over a solved grid.
///
/// Each decision re-estimates the action values with fresh generative samples
/// instead of trusting `best_actions`, which was computed for reconstructed
/// beliefs rather than the actual filter state.
pub struct GridPolicy<'a> {
    pub env: &'a LightDark,
    pub grid: &'a BeliefGrid,
    pub update_cfg: UpdateConfig,
    pub samples_per_action: usize,
}

impl<'a> GridPolicy<'a> {
    /// Estimated action values at `belief`; deterministic in `seed`.
    pub fn action_values(&self, belief: &ParticleBelief<crate::envs::LdState>, seed: u64) -> Vec<f64> {
        use rand::RngCore;
        let env = self.env;
        let gamma = env.discount();
        let mut rng = rng::seeded(&[seed, tags::LAVI]);
        let grid = self.grid;
        (0..env.action_count())
            .map(|action| {
                let mut acc = 0.0;
                let mut b = belief.reseeded(rng.next_u64());
                for _ in 0..self.samples_per_action {
                    let state = b.sample_state();
                    let next = env.step(&state, action, &mut rng);
                    let r = env.reward(&state, action, &next);
                    if env.is_terminal(&next) {
                        acc += r;
                        continue;
                    }
                    let obs = env.observe(action, &next, &mut rng);
                    let mut child = b.reseeded(rng.next_u64());
                    let summary = match child.update(env, action, &obs, &self.update_cfg) {
                        Ok(()) => {
                            let phi = represent(env, &child, ReprMode::MeanStd);
                            (phi[0], phi[1])
                        }
                        Err(_) => {
                            let phi = represent(env, &b, ReprMode::MeanStd);
                            (phi[0], phi[1])
                        }
                    };
                    acc += r
                        + gamma
                            * interpolate(
                                &grid.means,
                                &grid.stds,
                                &grid.values,
                                summary.0,
                                summary.1,
                            );
                }
                acc / self.samples_per_action as f64
            })
            .collect()
    }
}

impl<'a> ActionSelector<LightDark> for GridPolicy<'a> {
    fn select(
        &self,
        belief: &ParticleBelief<crate::envs::LdState>,
        seed: u64,
    ) -> (ActionIndex, Vec<f64>) {
        let q = self.action_values(belief, seed);
        let mut best = 0;
        for (a, &v) in q.iter().enumerate() {
            if v > q[best] {
                best = a;
            }
        }
        let mut pi = vec![0.0; q.len()];
        pi[best] = 1.0;
        (best, pi)
    }
}
