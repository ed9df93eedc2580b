//! Bootstrap particle filter over generative POMDP states.
//!
//! `update` propagates every particle through the transition model, reweights
//! by the observation density (or an ABC kernel), and systematically
//! resamples back to uniform weights. The belief owns its generator so a
//! cloned-and-reseeded belief evolves independently of its parent.

use rand::Rng;
use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;

use crate::error::BeliefError;
use crate::pomdp::{ActionIndex, GenerativePomdp};
use crate::rng;

const LOG_2PI: f64 = 1.8378770664093453; // ln(2*pi)

/// Which summary `represent` produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReprMode {
    /// Per-dimension mean and std (Bessel n-1), then appended features.
    MeanStd,
    /// Means only, then appended features (ablation).
    MeanOnly,
}

/// Particle-filter options.
#[derive(Debug, Clone, Default)]
pub struct UpdateConfig {
    /// When set, replace exact observation densities with a Gaussian kernel
    /// of this width between simulated and actual observation features.
    pub abc_sigma: Option<f64>,
}

/// Weighted particle set with its own ChaCha8 stream.
#[derive(Debug, Clone)]
pub struct ParticleBelief<S> {
    particles: Vec<S>,
    weights: Vec<f64>,
    rng: ChaCha8Rng,
}

impl<S: Clone> ParticleBelief<S> {
    /// Uniform belief over draws from the initial-state distribution.
    pub fn from_initial<P>(pomdp: &P, n: usize, mut rng: ChaCha8Rng) -> Self
    where
        P: GenerativePomdp<State = S>,
    {
        let particles: Vec<S> = (0..n).map(|_| pomdp.sample_initial(&mut rng)).collect();
        let weights = vec![1.0 / n as f64; n];
        Self {
            particles,
            weights,
            rng,
        }
    }

    /// Uniform belief over the given particles.
    pub fn from_particles(particles: Vec<S>, rng: ChaCha8Rng) -> Self {
        let n = particles.len();
        Self {
            particles,
            weights: vec![1.0 / n as f64; n],
            rng,
        }
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn particles(&self) -> &[S] {
        &self.particles
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Clone with a fresh generator, leaving the parent's stream untouched.
    pub fn reseeded(&self, seed: u64) -> Self {
        Self {
            particles: self.particles.clone(),
            weights: self.weights.clone(),
            rng: rng::seeded(&[seed]),
        }
    }

    /// Draw a particle index according to the current weights.
    pub fn sample_index(&mut self) -> usize {
        let u: f64 = self.rng.gen();
        let mut acc = 0.0;
        for (i, &w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                return i;
            }
        }
        self.particles.len() - 1
    }

    /// Draw a state according to the current weights.
    pub fn sample_state(&mut self) -> S {
        let i = self.sample_index();
        self.particles[i].clone()
    }

    /// Bootstrap update: propagate, reweight on `obs`, resample to uniform.
    ///
    /// On total weight collapse the reweighting is retried once with
    /// tempered densities (raised to the 0.5 power; the ABC path also
    /// redraws its simulated observations). If every weight is still zero
    /// the belief is left unchanged and `Depletion` is returned.
    pub fn update<P>(
        &mut self,
        pomdp: &P,
        action: ActionIndex,
        obs: &P::Observation,
        cfg: &UpdateConfig,
    ) -> Result<(), BeliefError>
    where
        P: GenerativePomdp<State = S>,
    {
        let propagated: Vec<S> = self
            .particles
            .iter()
            .map(|s| pomdp.step(s, action, &mut self.rng))
            .collect();

        let mut weights = observation_weights(
            pomdp,
            &propagated,
            &self.weights,
            action,
            obs,
            cfg,
            1.0,
            &mut self.rng,
        );
        if weights.is_err() {
            // Tempered retry.
            weights = observation_weights(
                pomdp,
                &propagated,
                &self.weights,
                action,
                obs,
                cfg,
                0.5,
                &mut self.rng,
            );
        }
        let weights = weights?;

        let n = self.particles.len();
        let u: f64 = self.rng.gen::<f64>() / n as f64;
        let picks = low_variance_resample(&weights, u);
        self.particles = picks.iter().map(|&i| propagated[i].clone()).collect();
        self.weights = vec![1.0 / n as f64; n];
        Ok(())
    }
}

/// Normalized observation weights for already-propagated particles.
///
/// `power` tempers the densities (1.0 normally, 0.5 on the retry). Exposed
/// separately so the sum-to-one contract is directly testable.
#[allow(clippy::too_many_arguments)]
pub fn observation_weights<P: GenerativePomdp>(
    pomdp: &P,
    propagated: &[P::State],
    prior_weights: &[f64],
    action: ActionIndex,
    obs: &P::Observation,
    cfg: &UpdateConfig,
    power: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, BeliefError> {
    let mut log_w = Vec::with_capacity(propagated.len());
    match cfg.abc_sigma {
        None => {
            for (s, &pw) in propagated.iter().zip(prior_weights) {
                let ld = pomdp.observation_log_density(obs, action, s);
                log_w.push(power * ld + pw.ln());
            }
        }
        Some(sigma) => {
            let mut actual = Vec::new();
            pomdp.observation_features(obs, &mut actual);
            let mut sim = Vec::new();
            for (s, &pw) in propagated.iter().zip(prior_weights) {
                let o_sim = pomdp.observe(action, s, rng);
                sim.clear();
                pomdp.observation_features(&o_sim, &mut sim);
                let mut ld = 0.0;
                for (a, b) in actual.iter().zip(sim.iter()) {
                    let z = (a - b) / sigma;
                    ld += -0.5 * z * z - sigma.ln() - 0.5 * LOG_2PI;
                }
                log_w.push(power * ld + pw.ln());
            }
        }
    }

    let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(BeliefError::Depletion { max_density: 0.0 });
    }
    let mut sum = 0.0;
    let mut w: Vec<f64> = log_w
        .iter()
        .map(|&l| {
            let v = (l - max).exp();
            sum += v;
            v
        })
        .collect();
    for v in w.iter_mut() {
        *v /= sum;
    }
    Ok(w)
}

/// Systematic (low-variance) resampling: one uniform offset `u` in
/// [0, 1/n), then n evenly spaced points through the cumulative weights.
/// Returns the chosen particle indices in point order.
pub fn low_variance_resample(weights: &[f64], u: f64) -> Vec<usize> {
    let n = weights.len();
    let step = 1.0 / n as f64;
    let mut picks = Vec::with_capacity(n);
    let mut cum = weights[0];
    let mut i = 0;
    for k in 0..n {
        let point = u + k as f64 * step;
        while point >= cum && i + 1 < n {
            i += 1;
            cum += weights[i];
        }
        picks.push(i);
    }
    picks
}

/// Belief summary fed to the network: per-dimension particle means (and,
/// in `MeanStd` mode, Bessel-corrected stds), then any appended features.
///
/// Particles are equally weighted whenever this is called (beliefs are
/// resampled to uniform), so the summary is unweighted.
///
/// Panics below two particles; the sample std is undefined there.
pub fn represent<P: GenerativePomdp>(
    pomdp: &P,
    belief: &ParticleBelief<P::State>,
    mode: ReprMode,
) -> Vec<f64> {
    let n = belief.len();
    assert!(n >= 2, "represent requires at least 2 particles, got {n}");
    let dim = pomdp.feature_dim();
    let mut means = vec![0.0; dim];
    let mut feats = Vec::with_capacity(dim);
    let mut all = Vec::with_capacity(n * dim);
    for s in belief.particles() {
        feats.clear();
        pomdp.state_features(s, &mut feats);
        debug_assert_eq!(feats.len(), dim);
        for (d, &f) in feats.iter().enumerate() {
            means[d] += f;
        }
        all.extend_from_slice(&feats);
    }
    for m in means.iter_mut() {
        *m /= n as f64;
    }

    let mut out = Vec::new();
    out.extend_from_slice(&means);
    if mode == ReprMode::MeanStd {
        for d in 0..dim {
            let mut ss = 0.0;
            for p in 0..n {
                let diff = all[p * dim + d] - means[d];
                ss += diff * diff;
            }
            out.push((ss / (n as f64 - 1.0)).sqrt());
        }
    }
    pomdp.appended_features(&belief.particles()[0], &mut out);
    out
}

/// Length of `represent` output for a given mode.
pub fn repr_dim<P: GenerativePomdp>(pomdp: &P, mode: ReprMode) -> usize {
    let base = match mode {
        ReprMode::MeanStd => 2 * pomdp.feature_dim(),
        ReprMode::MeanOnly => pomdp.feature_dim(),
    };
    base + pomdp.appended_dim()
}

/// Expected immediate reward of taking `action` in `belief`.
///
/// Exact weighted sum when the reward ignores the next state; otherwise a
/// one-sample-per-particle estimate drawn from `rng`.
pub fn belief_reward<P: GenerativePomdp>(
    pomdp: &P,
    belief: &ParticleBelief<P::State>,
    action: ActionIndex,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut total = 0.0;
    if pomdp.reward_is_state_action() {
        for (s, &w) in belief.particles().iter().zip(belief.weights()) {
            total += w * pomdp.reward(s, action, s);
        }
    } else {
        for (s, &w) in belief.particles().iter().zip(belief.weights()) {
            let next = pomdp.step(s, action, rng);
            total += w * pomdp.reward(s, action, &next);
        }
    }
    total
}

/// One generative belief transition: a sampled state/observation pair plus
/// the filtered successor belief.
#[derive(Debug)]
pub struct BeliefStep<S, O> {
    pub belief: ParticleBelief<S>,
    pub obs: O,
    pub next_state: S,
    /// Expected immediate reward of the parent belief under the action.
    pub reward: f64,
}

/// Sample s ~ b, s' ~ T(s,a), o ~ O(a,s'), then filter the whole belief on
/// o. The child belief gets its own stream seeded from `rng`.
pub fn belief_transition<P: GenerativePomdp>(
    pomdp: &P,
    belief: &mut ParticleBelief<P::State>,
    action: ActionIndex,
    cfg: &UpdateConfig,
    rng: &mut ChaCha8Rng,
) -> Result<BeliefStep<P::State, P::Observation>, BeliefError> {
    let reward = belief_reward(pomdp, belief, action, rng);
    let s = belief.sample_state();
    let next_state = pomdp.step(&s, action, rng);
    let obs = pomdp.observe(action, &next_state, rng);
    let mut child = belief.reseeded(rng.next_u64());
    child.update(pomdp, action, &obs, cfg)?;
    Ok(BeliefStep {
        belief: child,
        obs,
        next_state,
        reward,
    })
}
