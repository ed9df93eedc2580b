//! Command implementations. Each takes a resolved environment, the parsed
//! config, and the shared run context, and writes its CSV artifacts into the
//! output directory. All randomness descends from `Ctx::seed`, so reruns
//! with the same config and seed reproduce every file byte for byte (the
//! wall-clock column of metrics.csv excepted).

use std::path::{Path, PathBuf};

use beliefplan::belief::{repr_dim, ReprMode, UpdateConfig};
use beliefplan::config::FileConfig;
use beliefplan::envs::LightDark;
use beliefplan::lavi::{self, GridPolicy};
use beliefplan::mcts::{FinalCriterion, SearchConfig, Widening};
use beliefplan::nnet::{self, Net};
use beliefplan::pomdp::GenerativePomdp;
use beliefplan::rng::{self, tags};
use beliefplan::selfplay::{
    self, EvalResult, Harness, IterationMetrics, RawPolicySelector, RawValueSelector,
    RolloutSelector, SearchSelector,
};

use crate::output::{fmt_axis, fmt_f64, write_csv};
use crate::{AblateArm, CliError, EvalMethod, SweepGrid};

pub struct Ctx {
    pub cfg: FileConfig,
    pub seed: u64,
    pub out: PathBuf,
}

/// Filter settings plus representation mode, shared by every command.
struct Filter {
    n_particles: usize,
    update_cfg: UpdateConfig,
    repr_mode: ReprMode,
}

impl Filter {
    fn from_config(cfg: &FileConfig) -> Result<Self, CliError> {
        let (n_particles, update_cfg) = cfg.belief()?.build()?;
        let repr_mode = cfg.net()?.repr_mode()?;
        Ok(Filter {
            n_particles,
            update_cfg,
            repr_mode,
        })
    }

    fn harness<'a, P: GenerativePomdp>(&self, pomdp: &'a P) -> Harness<'a, P> {
        Harness {
            pomdp,
            n_particles: self.n_particles,
            update_cfg: self.update_cfg.clone(),
            repr_mode: self.repr_mode,
        }
    }
}

fn load_net<P: GenerativePomdp>(
    pomdp: &P,
    path: &Path,
    repr_mode: ReprMode,
) -> Result<Net, CliError> {
    let net = nnet::load_checkpoint(path)?;
    let want = repr_dim(pomdp, repr_mode);
    if net.arch.input_dim != want {
        return Err(CliError::Usage(format!(
            "checkpoint {} expects input dim {}, but the configured representation has dim {}",
            path.display(),
            net.arch.input_dim,
            want
        )));
    }
    if net.arch.action_dim != pomdp.action_count() {
        return Err(CliError::Usage(format!(
            "checkpoint {} has {} actions, environment has {}",
            path.display(),
            net.arch.action_dim,
            pomdp.action_count()
        )));
    }
    Ok(net)
}

fn write_eval(ctx: &Ctx, method: &str, n_seeds: usize, result: &EvalResult) -> Result<(), CliError> {
    let rows: Vec<Vec<String>> = result
        .returns
        .iter()
        .map(|(seed, g)| vec![method.to_string(), seed.to_string(), fmt_f64(*g)])
        .collect();
    write_csv(
        &ctx.out.join("eval.csv"),
        &["method", "seed", "episodeReturn"],
        &rows,
    )?;
    write_csv(
        &ctx.out.join("eval_summary.csv"),
        &["method", "nSeeds", "completed", "dropped", "meanReturn", "stdErr"],
        &[vec![
            method.to_string(),
            n_seeds.to_string(),
            result.returns.len().to_string(),
            result.dropped.to_string(),
            fmt_f64(result.mean),
            fmt_f64(result.std_err),
        ]],
    )?;
    println!(
        "{}: n={} mean={:.3} se={:.3} dropped={}",
        method, n_seeds, result.mean, result.std_err, result.dropped
    );
    Ok(())
}

// ---------------------------------------------------------------------------
// train

pub fn train<P: GenerativePomdp>(pomdp: &P, ctx: &Ctx) -> Result<(), CliError> {
    let filter = Filter::from_config(&ctx.cfg)?;
    let arch = ctx.cfg.net()?.build_arch(pomdp)?;
    let offline = ctx.cfg.search_offline()?.build("search.offline")?;
    let train_cfg = ctx.cfg.train()?.build()?;
    let sp = ctx.cfg.selfplay()?.build()?;

    let ckpt_dir = ctx.out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir)?;

    let harness = filter.harness(pomdp);
    let mut save_err: Option<std::io::Error> = None;
    let out = selfplay::policy_iteration(
        &harness,
        &arch,
        &offline,
        &train_cfg,
        &sp,
        ctx.seed,
        |net, m| {
            if save_err.is_none() {
                let path = ckpt_dir.join(format!("iter_{:03}.json", m.iteration));
                if let Err(e) = nnet::save_checkpoint(net, &path) {
                    save_err = Some(e);
                }
            }
            println!(
                "iter {:>3}: holdout {:+8.3} +/- {:.3} | loss {:.4}/{:.4} | buffer {:>6} | {:.1}s",
                m.iteration,
                m.mean_holdout_return,
                m.std_err,
                m.policy_loss,
                m.value_loss,
                m.buffer_size,
                m.wall_clock_seconds
            );
        },
    )?;
    if let Some(e) = save_err {
        return Err(e.into());
    }
    nnet::save_checkpoint(&out.net, &ckpt_dir.join("final.json"))?;

    let rows: Vec<Vec<String>> = out
        .metrics
        .iter()
        .map(|m| {
            vec![
                m.iteration.to_string(),
                fmt_f64(m.mean_holdout_return),
                fmt_f64(m.std_err),
                fmt_f64(m.policy_loss),
                fmt_f64(m.value_loss),
                m.buffer_size.to_string(),
                fmt_f64(m.wall_clock_seconds),
            ]
        })
        .collect();
    write_csv(
        &ctx.out.join("metrics.csv"),
        &[
            "iteration",
            "meanHoldoutReturn",
            "stdErr",
            "policyLoss",
            "valueLoss",
            "bufferSize",
            "wallClockSeconds",
        ],
        &rows,
    )?;
    println!("wrote {}", ctx.out.join("metrics.csv").display());
    Ok(())
}

// ---------------------------------------------------------------------------
// evaluate

pub fn evaluate<P: GenerativePomdp>(
    pomdp: &P,
    ctx: &Ctx,
    checkpoint: &Path,
    method: EvalMethod,
    nseeds: Option<usize>,
) -> Result<(), CliError> {
    let filter = Filter::from_config(&ctx.cfg)?;
    let eval_sec = ctx.cfg.eval()?;
    eval_sec.validate()?;
    let n_seeds = nseeds.unwrap_or(eval_sec.n_seeds);
    let net = load_net(pomdp, checkpoint, filter.repr_mode)?;
    let harness = filter.harness(pomdp);

    let result = match method {
        EvalMethod::Search => {
            let online = ctx.cfg.search_online()?.build("search.online")?;
            let selector = SearchSelector {
                pomdp,
                net: &net,
                cfg: &online,
                update_cfg: filter.update_cfg.clone(),
                repr_mode: filter.repr_mode,
            };
            selfplay::evaluate(&harness, &selector, n_seeds, ctx.seed, tags::EVAL)
        }
        EvalMethod::Rawpolicy => {
            let selector = RawPolicySelector {
                pomdp,
                net: &net,
                repr_mode: filter.repr_mode,
            };
            selfplay::evaluate(&harness, &selector, n_seeds, ctx.seed, tags::EVAL)
        }
        EvalMethod::Rawvalue => {
            let selector = RawValueSelector {
                pomdp,
                net: &net,
                update_cfg: filter.update_cfg.clone(),
                repr_mode: filter.repr_mode,
                observations_per_action: eval_sec.raw_value_observations,
            };
            selfplay::evaluate(&harness, &selector, n_seeds, ctx.seed, tags::EVAL)
        }
    };
    write_eval(ctx, method.label(), n_seeds, &result)
}

// ---------------------------------------------------------------------------
// lavi and baselines

pub fn lavi(env: &LightDark, ctx: &Ctx, nseeds: Option<usize>) -> Result<(), CliError> {
    let filter = Filter::from_config(&ctx.cfg)?;
    let lavi_cfg = ctx.cfg.lavi()?.build()?;
    let eval_sec = ctx.cfg.eval()?;
    eval_sec.validate()?;
    let n_seeds = nseeds.unwrap_or(eval_sec.n_seeds);

    let grid = lavi::solve(env, &lavi_cfg, &filter.update_cfg, ctx.seed);
    println!(
        "solved {}x{} grid in {} sweeps (final residual {:.2e})",
        lavi_cfg.grid_points,
        lavi_cfg.grid_points,
        grid.residuals.len(),
        grid.residuals.last().copied().unwrap_or(f64::NAN)
    );

    let n = lavi_cfg.grid_points;
    let mut rows = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            rows.push(vec![
                fmt_axis(grid.means[i]),
                fmt_axis(grid.stds[j]),
                fmt_f64(grid.value_at(i, j)),
                grid.best_action_at(i, j).to_string(),
            ]);
        }
    }
    write_csv(
        &ctx.out.join("lavi_grid.csv"),
        &["mean", "std", "value", "bestAction"],
        &rows,
    )?;

    let policy = GridPolicy {
        env,
        grid: &grid,
        update_cfg: filter.update_cfg.clone(),
        samples_per_action: lavi_cfg.eval_samples_per_action,
    };
    let harness = filter.harness(env);
    let result = selfplay::evaluate(&harness, &policy, n_seeds, ctx.seed, tags::EVAL);
    write_eval(ctx, "lavi", n_seeds, &result)
}

pub fn baseline_rollout<P: GenerativePomdp>(
    pomdp: &P,
    ctx: &Ctx,
    nseeds: Option<usize>,
) -> Result<(), CliError> {
    let filter = Filter::from_config(&ctx.cfg)?;
    let rollout_cfg = ctx.cfg.rollout()?.build()?;
    let eval_sec = ctx.cfg.eval()?;
    eval_sec.validate()?;
    let n_seeds = nseeds.unwrap_or(eval_sec.n_seeds);

    let selector = RolloutSelector {
        pomdp,
        cfg: &rollout_cfg,
        update_cfg: filter.update_cfg.clone(),
        repr_mode: filter.repr_mode,
    };
    let harness = filter.harness(pomdp);
    let result = selfplay::evaluate(&harness, &selector, n_seeds, ctx.seed, tags::EVAL);
    write_eval(ctx, "rollout", n_seeds, &result)
}

// ---------------------------------------------------------------------------
// sweep

pub fn sweep<P: GenerativePomdp>(
    pomdp: &P,
    ctx: &Ctx,
    checkpoint: &Path,
    grid: SweepGrid,
    nseeds: Option<usize>,
) -> Result<(), CliError> {
    let filter = Filter::from_config(&ctx.cfg)?;
    let sweep_sec = ctx.cfg.sweep()?;
    sweep_sec.validate()?;
    let online = ctx.cfg.search_online()?.build("search.online")?;
    let net = load_net(pomdp, checkpoint, filter.repr_mode)?;
    let n_seeds = nseeds.unwrap_or(sweep_sec.n_seeds);
    let harness = filter.harness(pomdp);

    let ks = linspace(sweep_sec.k_min, sweep_sec.k_max, sweep_sec.grid_points);
    let alphas = linspace(sweep_sec.alpha_min, sweep_sec.alpha_max, sweep_sec.grid_points);

    let grids: &[SweepGrid] = match grid {
        SweepGrid::State => &[SweepGrid::State],
        SweepGrid::Action => &[SweepGrid::Action],
        SweepGrid::Both => &[SweepGrid::State, SweepGrid::Action],
    };
    for &which in grids {
        let (grid_id, file) = match which {
            SweepGrid::State => (0u64, "sweep_state.csv"),
            SweepGrid::Action => (1u64, "sweep_action.csv"),
            SweepGrid::Both => unreachable!(),
        };
        let mut rows = Vec::with_capacity(ks.len() * alphas.len());
        for (ki, &k) in ks.iter().enumerate() {
            for (ai, &alpha) in alphas.iter().enumerate() {
                let mut cell = online.clone();
                let law = Some(Widening { k, alpha });
                match which {
                    SweepGrid::State => cell.belief_widening = law,
                    SweepGrid::Action => cell.action_widening = law,
                    SweepGrid::Both => unreachable!(),
                }
                let selector = SearchSelector {
                    pomdp,
                    net: &net,
                    cfg: &cell,
                    update_cfg: filter.update_cfg.clone(),
                    repr_mode: filter.repr_mode,
                };
                let cell_idx = (ki * alphas.len() + ai) as u64;
                let cell_seed = rng::mix(&[ctx.seed, tags::SWEEP, grid_id, cell_idx]);
                let result =
                    selfplay::evaluate(&harness, &selector, n_seeds, cell_seed, tags::EVAL);
                rows.push(vec![
                    fmt_axis(k),
                    fmt_axis(alpha),
                    fmt_f64(result.mean),
                    fmt_f64(result.std_err),
                    result.dropped.to_string(),
                ]);
            }
        }
        write_csv(
            &ctx.out.join(file),
            &["k", "alpha", "meanReturn", "stdErr", "dropped"],
            &rows,
        )?;
        println!("wrote {}", ctx.out.join(file).display());
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// ablate

/// One full training run with the offline search and/or representation
/// modified; returns the per-iteration holdout metrics.
fn train_variant<P: GenerativePomdp>(
    pomdp: &P,
    ctx: &Ctx,
    repr_mode: ReprMode,
    mutate_offline: impl Fn(&mut SearchConfig),
) -> Result<Vec<IterationMetrics>, CliError> {
    let (n_particles, update_cfg) = ctx.cfg.belief()?.build()?;
    let mut arch = ctx.cfg.net()?.build_arch(pomdp)?;
    arch.input_dim = repr_dim(pomdp, repr_mode);
    let mut offline = ctx.cfg.search_offline()?.build("search.offline")?;
    mutate_offline(&mut offline);
    let train_cfg = ctx.cfg.train()?.build()?;
    let sp = ctx.cfg.selfplay()?.build()?;
    let harness = Harness {
        pomdp,
        n_particles,
        update_cfg,
        repr_mode,
    };
    let out = selfplay::policy_iteration(
        &harness,
        &arch,
        &offline,
        &train_cfg,
        &sp,
        ctx.seed,
        |_, m| {
            println!(
                "  iter {:>3}: holdout {:+8.3} +/- {:.3} | loss {:.4}/{:.4}",
                m.iteration, m.mean_holdout_return, m.std_err, m.policy_loss, m.value_loss
            );
        },
    )?;
    Ok(out.metrics)
}

fn metric_rows(arm: &str, variant: &str, zq: &str, zn: &str, metrics: &[IterationMetrics]) -> Vec<Vec<String>> {
    metrics
        .iter()
        .map(|m| {
            vec![
                arm.to_string(),
                variant.to_string(),
                m.iteration.to_string(),
                zq.to_string(),
                zn.to_string(),
                fmt_f64(m.mean_holdout_return),
                fmt_f64(m.std_err),
            ]
        })
        .collect()
}

pub fn ablate<P: GenerativePomdp>(
    pomdp: &P,
    ctx: &Ctx,
    arm: AblateArm,
    checkpoint: Option<&Path>,
    nseeds: Option<usize>,
) -> Result<(), CliError> {
    let ablate_sec = ctx.cfg.ablate()?;
    ablate_sec.validate()?;
    let mut rows: Vec<Vec<String>> = Vec::new();

    match arm {
        AblateArm::Repr => {
            for (variant, mode) in [
                ("mean_std", ReprMode::MeanStd),
                ("mean_only", ReprMode::MeanOnly),
            ] {
                println!("arm repr, variant {variant}:");
                let metrics = train_variant(pomdp, ctx, mode, |_| {})?;
                rows.extend(metric_rows("repr", variant, "", "", &metrics));
            }
        }
        AblateArm::Widening => {
            use beliefplan::mcts::WideningPrior;
            let repr_mode = ctx.cfg.net()?.repr_mode()?;
            for (variant, prior) in [
                ("policy", WideningPrior::Policy),
                ("uniform", WideningPrior::Uniform),
            ] {
                println!("arm widening, variant {variant}:");
                let metrics =
                    train_variant(pomdp, ctx, repr_mode, |c| c.widening_prior = prior)?;
                rows.extend(metric_rows("widening", variant, "", "", &metrics));
            }
        }
        AblateArm::Targets => {
            let repr_mode = ctx.cfg.net()?.repr_mode()?;
            let zn = ctx.cfg.search_offline()?.build("search.offline")?.z_n;
            for z in linspace(0.0, 1.0, ablate_sec.z_grid_points) {
                let variant = format!("zq={}", fmt_axis(z));
                println!("arm targets, variant {variant}:");
                let metrics = train_variant(pomdp, ctx, repr_mode, |c| c.z_q = z)?;
                rows.extend(metric_rows(
                    "targets",
                    &variant,
                    &fmt_axis(z),
                    &fmt_axis(zn),
                    &metrics,
                ));
            }
        }
        AblateArm::Zgrid => {
            let filter = Filter::from_config(&ctx.cfg)?;
            let path = checkpoint.ok_or_else(|| {
                CliError::Usage("the zgrid arm requires --checkpoint".to_string())
            })?;
            let net = load_net(pomdp, path, filter.repr_mode)?;
            let online = ctx.cfg.search_online()?.build("search.online")?;
            let n_seeds = nseeds.unwrap_or(ablate_sec.n_seeds);
            let harness = filter.harness(pomdp);
            let zs = linspace(0.0, 1.0, ablate_sec.z_grid_points);
            for (qi, &zq) in zs.iter().enumerate() {
                for (ni, &zn) in zs.iter().enumerate() {
                    let mut cell = online.clone();
                    // Sampling at zero temperature is the argmax criterion,
                    // except at zq = zn = 0 where the tree policy is uniform
                    // and sampling acts uniformly at random.
                    cell.final_criterion = FinalCriterion::SamplePi;
                    cell.tau = 0.0;
                    cell.z_q = zq;
                    cell.z_n = zn;
                    let selector = SearchSelector {
                        pomdp,
                        net: &net,
                        cfg: &cell,
                        update_cfg: filter.update_cfg.clone(),
                        repr_mode: filter.repr_mode,
                    };
                    let cell_idx = (qi * zs.len() + ni) as u64;
                    let cell_seed = rng::mix(&[ctx.seed, tags::ABLATE, cell_idx]);
                    let result =
                        selfplay::evaluate(&harness, &selector, n_seeds, cell_seed, tags::EVAL);
                    rows.push(vec![
                        "zgrid".to_string(),
                        String::new(),
                        String::new(),
                        fmt_axis(zq),
                        fmt_axis(zn),
                        fmt_f64(result.mean),
                        fmt_f64(result.std_err),
                    ]);
                }
            }
        }
    }

    write_csv(
        &ctx.out.join("ablate.csv"),
        &["arm", "variant", "iteration", "zq", "zn", "meanReturn", "stdErr"],
        &rows,
    )?;
    println!("wrote {}", ctx.out.join("ablate.csv").display());
    Ok(())
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let step = (hi - lo) / (n - 1) as f64;
    (0..n).map(|i| lo + step * i as f64).collect()
}
