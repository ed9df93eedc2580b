//! End-to-end checks of the self-play training loop, the value-iteration
//! reference solver, and the evaluation harness. Sizes are kept tiny; these
//! tests exercise wiring and determinism, not final policy quality.

use beliefplan::belief::{repr_dim, ParticleBelief, ReprMode, UpdateConfig};
use beliefplan::envs::{LightDark, ACT_STOP};
use beliefplan::error::SelfPlayError;
use beliefplan::lavi::{self, GridPolicy, LaviConfig};
use beliefplan::mcts::{
    Exploration, FinalCriterion, SearchConfig, Widening, WideningPrior,
};
use beliefplan::nnet::{ArchSpec, Net, OptimizerKind, TrainConfig, ValueLoss};
use beliefplan::pomdp::{run_episode, GenerativePomdp};
use beliefplan::selfplay::{
    collect_data, evaluate, policy_iteration, Harness, IterationMetrics, RawValueSelector,
    RolloutSelector, SelfPlayConfig,
};
use beliefplan::rng;
use rand_chacha::ChaCha8Rng;

fn search_cfg() -> SearchConfig {
    SearchConfig {
        n_online: 16,
        c: 1.0,
        depth: 5,
        tau: 1.0,
        z_q: 1.0,
        z_n: 1.0,
        action_widening: Some(Widening { k: 2.0, alpha: 0.25 }),
        belief_widening: Some(Widening { k: 2.0, alpha: 0.1 }),
        bootstrap_q0: false,
        exploration: Exploration::Puct,
        widening_prior: WideningPrior::Policy,
        final_criterion: FinalCriterion::SamplePi,
        renormalize_puct_prior: false,
        rollout_depth: 0,
    }
}

fn arch_for<P: GenerativePomdp>(pomdp: &P) -> ArchSpec {
    ArchSpec {
        input_dim: repr_dim(pomdp, ReprMode::MeanStd),
        action_dim: pomdp.action_count(),
        hidden_width: 16,
        trunk_layers: 2,
        batch_norm: false,
        dropout: 0.0,
    }
}

fn train_cfg() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        learning_rate: 1e-3,
        l2: 1e-5,
        batch_size: 16,
        train_fraction: 0.8,
        optimizer: OptimizerKind::Adam,
        value_loss: ValueLoss::Mse,
        bn_momentum: 0.1,
    }
}

fn metrics_key(m: &IterationMetrics) -> (usize, Vec<u64>, usize, usize) {
    // Everything except wall_clock_seconds, floats as bits for exactness.
    let floats = [
        m.mean_holdout_return,
        m.std_err,
        m.policy_loss,
        m.value_loss,
        m.val_policy_loss,
        m.val_value_loss,
        m.collect_mean_return,
    ];
    (
        m.iteration,
        floats.iter().map(|f| f.to_bits()).collect(),
        m.buffer_size,
        m.dropped_episodes,
    )
}

fn run_loop(env: &LightDark, master_seed: u64) -> (Net, Vec<IterationMetrics>, usize) {
    let harness = Harness {
        pomdp: env,
        n_particles: 100,
        update_cfg: UpdateConfig::default(),
        repr_mode: ReprMode::MeanStd,
    };
    let sp = SelfPlayConfig {
        n_iterations: 2,
        n_data: 4,
        holdout_episodes: 4,
        buffer_capacity: 10_000,
        n_buffer: 1,
        max_drop_fraction: 0.9,
    };
    let mut callbacks = 0;
    let out = policy_iteration(
        &harness,
        &arch_for(env),
        &search_cfg(),
        &train_cfg(),
        &sp,
        master_seed,
        |_, _| callbacks += 1,
    )
    .expect("tiny training loop should not starve");
    (out.net, out.metrics, callbacks)
}

#[test]
fn policy_iteration_metrics_are_well_formed() {
    let env = LightDark::ld10();
    let (_, metrics, callbacks) = run_loop(&env, 900);
    assert_eq!(metrics.len(), 2);
    assert_eq!(callbacks, 2);
    for (i, m) in metrics.iter().enumerate() {
        assert_eq!(m.iteration, i);
        assert!(m.buffer_size > 0);
        assert!(m.policy_loss.is_finite());
        assert!(m.value_loss.is_finite());
        assert!(m.val_policy_loss.is_finite());
        assert!(m.val_value_loss.is_finite());
        assert!(m.mean_holdout_return.is_finite());
        assert!(m.collect_mean_return.is_finite());
        assert!(m.std_err >= 0.0);
        assert!(m.wall_clock_seconds >= 0.0);
    }
    // Later iterations fold new data on top of the old buffer.
    assert!(metrics[1].buffer_size >= metrics[0].buffer_size);
}

#[test]
fn policy_iteration_is_deterministic_up_to_wall_clock() {
    let env = LightDark::ld10();
    let (net_a, metrics_a, _) = run_loop(&env, 901);
    let (net_b, metrics_b, _) = run_loop(&env, 901);
    let keys_a: Vec<_> = metrics_a.iter().map(metrics_key).collect();
    let keys_b: Vec<_> = metrics_b.iter().map(metrics_key).collect();
    assert_eq!(keys_a, keys_b);
    let json_a = serde_json::to_string(&net_a).unwrap();
    let json_b = serde_json::to_string(&net_b).unwrap();
    assert_eq!(json_a, json_b, "trained weights diverged between reruns");
}

#[test]
fn raw_value_selector_probes_every_action_observation_pair() {
    let env = LightDark::ld10();
    let net = Net::new(arch_for(&env), 7);
    let obs_per_action = 9;
    let selector = RawValueSelector {
        pomdp: &env,
        net: &net,
        update_cfg: UpdateConfig::default(),
        repr_mode: ReprMode::MeanStd,
        observations_per_action: obs_per_action,
    };
    let belief = ParticleBelief::from_initial(&env, 100, rng::seeded(&[41]));
    let (values, updates) = selector.action_values(&belief, 11);
    assert_eq!(values.len(), env.action_count());
    assert_eq!(updates, env.action_count() * obs_per_action);
    assert!(values.iter().all(|q| q.is_finite()));
}

/// Observations never match any particle, so every belief update depletes.
struct BlackHole;

impl GenerativePomdp for BlackHole {
    type State = f64;
    type Observation = ();

    fn action_count(&self) -> usize {
        2
    }
    fn discount(&self) -> f64 {
        0.95
    }
    fn max_steps(&self) -> usize {
        4
    }
    fn sample_initial(&self, _rng: &mut ChaCha8Rng) -> f64 {
        0.0
    }
    fn step(&self, s: &f64, _action: usize, _rng: &mut ChaCha8Rng) -> f64 {
        s + 1.0
    }
    fn observe(&self, _action: usize, _next: &f64, _rng: &mut ChaCha8Rng) {}
    fn reward(&self, _s: &f64, _action: usize, _next: &f64) -> f64 {
        0.0
    }
    fn observation_density(&self, _obs: &(), _action: usize, _next: &f64) -> f64 {
        0.0
    }
    fn observation_features(&self, _obs: &(), _out: &mut Vec<f64>) {}
    fn is_terminal(&self, _s: &f64) -> bool {
        false
    }
    fn feature_dim(&self) -> usize {
        1
    }
    fn state_features(&self, s: &f64, out: &mut Vec<f64>) {
        out.push(*s);
    }
}

#[test]
fn collect_data_reports_starvation_when_every_episode_depletes() {
    let env = BlackHole;
    let harness = Harness {
        pomdp: &env,
        n_particles: 20,
        update_cfg: UpdateConfig::default(),
        repr_mode: ReprMode::MeanStd,
    };
    let net = Net::new(arch_for(&env), 5);
    let err = collect_data(&harness, &net, &search_cfg(), 4, 0, 77, 0.5)
        .expect_err("all episodes deplete, collection must fail");
    match err {
        SelfPlayError::Starvation { dropped, total, .. } => {
            assert_eq!(dropped, 4);
            assert_eq!(total, 4);
        }
        other => panic!("expected starvation, got {other:?}"),
    }
}

#[test]
fn evaluate_is_deterministic_and_accounts_for_every_seed() {
    let env = LightDark::ld10();
    let harness = Harness {
        pomdp: &env,
        n_particles: 100,
        update_cfg: UpdateConfig::default(),
        repr_mode: ReprMode::MeanStd,
    };
    let rollout_cfg = SearchConfig {
        n_online: 32,
        exploration: Exploration::Uct,
        widening_prior: WideningPrior::Uniform,
        final_criterion: FinalCriterion::RobustChild,
        rollout_depth: 5,
        ..search_cfg()
    };
    let selector = RolloutSelector {
        pomdp: &env,
        cfg: &rollout_cfg,
        update_cfg: UpdateConfig::default(),
        repr_mode: ReprMode::MeanStd,
    };
    let a = evaluate(&harness, &selector, 6, 321, 9);
    let b = evaluate(&harness, &selector, 6, 321, 9);
    assert_eq!(a.returns.len() + a.dropped, 6);
    assert_eq!(a.returns, b.returns);
    assert_eq!(a.dropped, b.dropped);
    assert_eq!(a.mean.to_bits(), b.mean.to_bits());
}

fn tiny_lavi() -> LaviConfig {
    LaviConfig {
        grid_points: 9,
        samples_per_point: 40,
        sweeps: 8,
        reconstruction_particles: 100,
        eval_samples_per_action: 40,
        ..LaviConfig::default()
    }
}

#[test]
fn value_iteration_converges_toward_the_stop_reward() {
    let env = LightDark::ld10();
    let grid = lavi::solve(&env, &tiny_lavi(), &UpdateConfig::default(), 55);
    assert!(!grid.residuals.is_empty());
    assert!(grid.residuals.len() <= 8);
    assert!(
        grid.residuals.last().unwrap() < grid.residuals.first().unwrap(),
        "sup-norm residual should shrink across sweeps"
    );
    // A tight belief at the origin is one stop action away from +100.
    let (i, j) = grid.nearest(0.0, 0.3);
    assert!(
        grid.value_at(i, j) >= 50.0,
        "value at the goal too low: {}",
        grid.value_at(i, j)
    );
    assert_eq!(grid.best_action_at(i, j), ACT_STOP);
}

#[test]
fn grid_policy_completes_episodes() {
    let env = LightDark::ld10();
    let grid = lavi::solve(&env, &tiny_lavi(), &UpdateConfig::default(), 55);
    let policy = GridPolicy {
        env: &env,
        grid: &grid,
        update_cfg: UpdateConfig::default(),
        samples_per_action: 40,
    };
    let rec = run_episode(
        &env,
        &policy,
        100,
        &UpdateConfig::default(),
        ReprMode::MeanStd,
        1234,
    )
    .expect("grid policy episode");
    assert!(rec.total_return.is_finite());
    assert!(!rec.steps.is_empty());
}
