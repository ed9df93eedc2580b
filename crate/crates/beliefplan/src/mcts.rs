//! Monte Carlo tree search over particle beliefs with double progressive
//! widening.
//!
//! Two guidance modes share the tree: `Network` scores leaves with the value
//! head and biases selection with policy-head priors (PUCT); `Rollout`
//! scores leaves with random rollouts from a sampled state and explores with
//! UCT. Action and belief widening are each optional; a disabled action
//! widening expands every action when a node is created, and a disabled
//! belief widening keeps exactly one sampled successor per edge.

use rand::Rng;
use rand_chacha::rand_core::RngCore;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::belief::{belief_reward, belief_transition, represent, ParticleBelief, ReprMode, UpdateConfig};
use crate::nnet::Net;
use crate::pomdp::{ActionIndex, GenerativePomdp};
use crate::rng;

/// Progressive-widening law: grow while `count <= k * visits^alpha`
/// (`0^0 = 1`, so the first expansion always happens).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Widening {
    pub k: f64,
    pub alpha: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Exploration {
    /// Q + c * prior * sqrt(N(b)) / (1 + N(b,a)).
    Puct,
    /// Q + c * sqrt(ln N(b) / N(b,a)); unvisited edges first.
    Uct,
}

/// Distribution used to draw the next widened action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum WideningPrior {
    /// Policy head, renormalized over unexpanded actions.
    Policy,
    /// Uniform over unexpanded actions.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FinalCriterion {
    /// Sample the tree policy (data collection).
    SamplePi,
    /// Argmax of the tree policy, ties to the lowest action (evaluation).
    ArgmaxPi,
    /// Most-visited root edge (rollout baseline).
    RobustChild,
}

#[derive(Debug, Clone)]
pub struct SearchConfig {
    pub n_online: usize,
    pub c: f64,
    pub depth: usize,
    /// Tree-policy temperature; below 1e-6 collapses to an argmax one-hot.
    pub tau: f64,
    /// Q-weight exponent in the tree policy.
    pub z_q: f64,
    /// Visit-count exponent in the tree policy.
    pub z_n: f64,
    pub action_widening: Option<Widening>,
    pub belief_widening: Option<Widening>,
    /// Initialize Q(b,a) from a one-step probe (reward plus discounted value
    /// of a sampled successor belief that is not added to the tree).
    pub bootstrap_q0: bool,
    pub exploration: Exploration,
    pub widening_prior: WideningPrior,
    pub final_criterion: FinalCriterion,
    /// Renormalize PUCT priors over the expanded set (ablation; the default
    /// uses raw policy-head probabilities).
    pub renormalize_puct_prior: bool,
    /// Rollout length for the `Rollout` guide.
    pub rollout_depth: usize,
}

/// Leaf evaluation source.
pub enum Guide<'a> {
    Network(&'a Net),
    Rollout,
}

pub fn puct_score(q: f64, c: f64, prior: f64, parent_n: u64, edge_n: u64) -> f64 {
    q + c * prior * (parent_n as f64).sqrt() / (1.0 + edge_n as f64)
}

pub fn uct_score(q: f64, c: f64, parent_n: u64, edge_n: u64) -> f64 {
    if edge_n == 0 {
        f64::INFINITY
    } else {
        q + c * ((parent_n as f64).ln() / edge_n as f64).sqrt()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EdgeStat {
    pub action: ActionIndex,
    pub n: u64,
    pub q: f64,
    pub prior: f64,
    pub children: usize,
    /// Raw backed-up values, recorded only when requested.
    pub backups: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct NodeStat {
    pub id: usize,
    pub n: u64,
    pub value: f64,
    pub terminal: bool,
    pub edges: Vec<EdgeStat>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PlanOutcome {
    pub action: ActionIndex,
    /// Tree policy over all actions (zero outside the expanded set).
    pub pi: Vec<f64>,
    pub root_visits: u64,
    pub root: Vec<EdgeStat>,
    /// Full tree statistics when recording.
    pub tree: Option<Vec<NodeStat>>,
}

struct Edge {
    action: ActionIndex,
    prior: f64,
    n: u64,
    q: f64,
    children: Vec<(usize, f64)>,
    backups: Vec<f64>,
}

struct Node<S> {
    belief: ParticleBelief<S>,
    prior: Vec<f64>,
    value: f64,
    n: u64,
    expanded: bool,
    terminal: bool,
    edges: Vec<Edge>,
}

struct Search<'a, P: GenerativePomdp> {
    pomdp: &'a P,
    guide: &'a Guide<'a>,
    update_cfg: &'a UpdateConfig,
    repr_mode: ReprMode,
    cfg: &'a SearchConfig,
    rng: ChaCha8Rng,
    nodes: Vec<Node<P::State>>,
    record: bool,
}

impl<'a, P: GenerativePomdp> Search<'a, P> {
    fn make_node(&mut self, mut belief: ParticleBelief<P::State>, terminal: bool) -> usize {
        let n_actions = self.pomdp.action_count();
        let uniform = vec![1.0 / n_actions as f64; n_actions];
        let (prior, value) = if terminal {
            (uniform, 0.0)
        } else {
            match self.guide {
                Guide::Network(net) => net.eval(&represent(self.pomdp, &belief, self.repr_mode)),
                Guide::Rollout => {
                    let v = rollout(
                        self.pomdp,
                        &mut belief,
                        self.cfg.rollout_depth,
                        &mut self.rng,
                    );
                    (uniform, v)
                }
            }
        };
        let id = self.nodes.len();
        self.nodes.push(Node {
            belief,
            prior,
            value,
            n: 0,
            expanded: false,
            terminal,
            edges: Vec::new(),
        });
        if self.cfg.action_widening.is_none() && !terminal {
            for a in 0..n_actions {
                self.make_edge(id, a);
            }
        }
        id
    }

    fn make_edge(&mut self, node: usize, action: ActionIndex) {
        let q0 = if self.cfg.bootstrap_q0 {
            self.bootstrap_q0(node, action)
        } else {
            0.0
        };
        let prior = self.nodes[node].prior[action];
        self.nodes[node].edges.push(Edge {
            action,
            prior,
            n: 0,
            q: q0,
            children: Vec::new(),
            backups: Vec::new(),
        });
    }

    /// One-step probe: r + gamma * V(b') for a sampled successor belief.
    /// The probe belief is discarded, a terminal draw yields just r, and a
    /// depleted probe falls back to zero.
    fn bootstrap_q0(&mut self, node: usize, action: ActionIndex) -> f64 {
        let Self {
            pomdp,
            guide,
            update_cfg,
            repr_mode,
            rng,
            nodes,
            ..
        } = self;
        let step = match belief_transition(*pomdp, &mut nodes[node].belief, action, update_cfg, rng)
        {
            Ok(step) => step,
            Err(_) => return 0.0,
        };
        if pomdp.is_terminal(&step.next_state) {
            return step.reward;
        }
        let v = match guide {
            Guide::Network(net) => net.eval(&represent(*pomdp, &step.belief, *repr_mode)).1,
            Guide::Rollout => 0.0,
        };
        step.reward + pomdp.discount() * v
    }

    /// Maybe widen the action set, then return the selected edge index.
    fn select_action(&mut self, node: usize) -> usize {
        let n_actions = self.pomdp.action_count();
        if let Some(w) = self.cfg.action_widening {
            let expanded = self.nodes[node].edges.len();
            let visits = self.nodes[node].n as f64;
            if expanded < n_actions && expanded as f64 <= w.k * visits.powf(w.alpha) {
                let action = self.draw_unexpanded(node);
                self.make_edge(node, action);
            }
        }
        let node = &self.nodes[node];
        let prior_norm = if self.cfg.renormalize_puct_prior {
            let s: f64 = node.edges.iter().map(|e| e.prior).sum();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        } else {
            1.0
        };
        let mut best: Option<(usize, f64, ActionIndex)> = None;
        for (i, e) in node.edges.iter().enumerate() {
            let score = match self.cfg.exploration {
                Exploration::Puct => {
                    puct_score(e.q, self.cfg.c, e.prior / prior_norm, node.n, e.n)
                }
                Exploration::Uct => uct_score(e.q, self.cfg.c, node.n, e.n),
            };
            let better = match best {
                None => true,
                Some((_, bs, ba)) => score > bs || (score == bs && e.action < ba),
            };
            if better {
                best = Some((i, score, e.action));
            }
        }
        best.expect("select_action on a node with no edges").0
    }

    /// Widening draw over unexpanded actions, by policy prior or uniformly.
    fn draw_unexpanded(&mut self, node: usize) -> ActionIndex {
        let n_actions = self.pomdp.action_count();
        let mut unexpanded = vec![true; n_actions];
        for e in &self.nodes[node].edges {
            unexpanded[e.action] = false;
        }
        let candidates: Vec<ActionIndex> = (0..n_actions).filter(|&a| unexpanded[a]).collect();
        debug_assert!(!candidates.is_empty());
        match self.cfg.widening_prior {
            WideningPrior::Uniform => candidates[self.rng.gen_range(0..candidates.len())],
            WideningPrior::Policy => {
                let weights: Vec<f64> = candidates
                    .iter()
                    .map(|&a| self.nodes[node].prior[a])
                    .collect();
                let total: f64 = weights.iter().sum();
                if total <= 0.0 {
                    return candidates[self.rng.gen_range(0..candidates.len())];
                }
                let mut u = self.rng.gen::<f64>() * total;
                for (i, &w) in weights.iter().enumerate() {
                    u -= w;
                    if u < 0.0 {
                        return candidates[i];
                    }
                }
                *candidates.last().unwrap()
            }
        }
    }

    /// Belief widening: create a new successor (with one retry on particle
    /// depletion) or revisit a stored one uniformly. `None` means both
    /// attempts depleted.
    fn expand(&mut self, node: usize, edge_idx: usize) -> Option<(usize, f64)> {
        let action = self.nodes[node].edges[edge_idx].action;
        let edge = &self.nodes[node].edges[edge_idx];
        let create = match self.cfg.belief_widening {
            Some(w) => {
                (edge.children.len() as f64) <= w.k * (edge.n as f64).powf(w.alpha)
            }
            None => edge.children.is_empty(),
        };
        if !create {
            let children = &self.nodes[node].edges[edge_idx].children;
            let pick = self.rng.gen_range(0..children.len());
            return Some(children[pick]);
        }
        for _attempt in 0..2 {
            let (child_belief, next_state, reward) = {
                let Self {
                    pomdp, rng, nodes, ..
                } = self;
                let belief = &mut nodes[node].belief;
                let reward = belief_reward(*pomdp, belief, action, rng);
                let s = belief.sample_state();
                let next = pomdp.step(&s, action, rng);
                let obs = pomdp.observe(action, &next, rng);
                let mut child = belief.reseeded(rng.next_u64());
                match child.update(*pomdp, action, &obs, self.update_cfg) {
                    Ok(()) => (child, next, reward),
                    Err(_) => continue,
                }
            };
            let terminal = self.pomdp.is_terminal(&next_state);
            let cid = self.make_node(child_belief, terminal);
            self.nodes[node].edges[edge_idx]
                .children
                .push((cid, reward));
            return Some((cid, reward));
        }
        None
    }

    fn simulate(&mut self, node: usize, depth: usize) -> f64 {
        if depth == 0 || self.nodes[node].terminal {
            return 0.0;
        }
        if !self.nodes[node].expanded {
            self.nodes[node].expanded = true;
            return self.nodes[node].value;
        }
        self.nodes[node].n += 1;
        let edge_idx = self.select_action(node);
        match self.expand(node, edge_idx) {
            // Both expansion attempts depleted: fall back to this node's
            // value estimate without backing up the edge.
            None => self.nodes[node].value,
            Some((child, reward)) => {
                let q = reward + self.pomdp.discount() * self.simulate(child, depth - 1);
                let record = self.record;
                let e = &mut self.nodes[node].edges[edge_idx];
                e.n += 1;
                e.q += (q - e.q) / e.n as f64;
                if record {
                    e.backups.push(q);
                }
                q
            }
        }
    }

    fn edge_stats(&self, node: usize) -> Vec<EdgeStat> {
        self.nodes[node]
            .edges
            .iter()
            .map(|e| EdgeStat {
                action: e.action,
                n: e.n,
                q: e.q,
                prior: e.prior,
                children: e.children.len(),
                backups: e.backups.clone(),
            })
            .collect()
    }
}

/// Random-action rollout from a state sampled out of the belief; no belief
/// updates along the way.
fn rollout<P: GenerativePomdp>(
    pomdp: &P,
    belief: &mut ParticleBelief<P::State>,
    depth: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let mut s = belief.sample_state();
    let mut total = 0.0;
    let mut disc = 1.0;
    for _ in 0..depth {
        if pomdp.is_terminal(&s) {
            break;
        }
        let a = rng.gen_range(0..pomdp.action_count());
        let next = pomdp.step(&s, a, rng);
        total += disc * pomdp.reward(&s, a, &next);
        disc *= pomdp.discount();
        s = next;
    }
    total
}

/// Q-weighted visit-count tree policy over root edge statistics
/// `(action, q, n)`. Weights follow
/// `(softmax(q)^z_q * (n / sum n)^z_n)^(1/tau)`, computed in log space;
/// a zero exponent removes its term entirely. Temperatures below 1e-6
/// collapse to a one-hot argmax (ties to the lowest action), except that
/// `z_q = z_n = 0` yields the uniform distribution over expanded actions.
pub fn tree_policy(
    stats: &[(ActionIndex, f64, u64)],
    tau: f64,
    z_q: f64,
    z_n: f64,
    n_actions: usize,
) -> Vec<f64> {
    let mut out = vec![0.0; n_actions];
    if stats.is_empty() {
        for v in out.iter_mut() {
            *v = 1.0 / n_actions as f64;
        }
        return out;
    }
    let m = stats.len();
    let uniform = |out: &mut Vec<f64>| {
        for &(a, _, _) in stats {
            out[a] = 1.0 / m as f64;
        }
    };

    // log softmax over Q.
    let max_q = stats.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max);
    let lse: f64 = stats
        .iter()
        .map(|s| (s.1 - max_q).exp())
        .sum::<f64>()
        .ln();
    let total_n: u64 = stats.iter().map(|s| s.2).sum();
    let base: Vec<f64> = stats
        .iter()
        .map(|&(_, q, n)| {
            let mut b = 0.0;
            if z_q != 0.0 {
                b += z_q * (q - max_q - lse);
            }
            if z_n != 0.0 {
                b += z_n
                    * if n == 0 || total_n == 0 {
                        f64::NEG_INFINITY
                    } else {
                        (n as f64).ln() - (total_n as f64).ln()
                    };
            }
            b
        })
        .collect();

    let max_b = base.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if tau < 1e-6 {
        if (z_q == 0.0 && z_n == 0.0) || !max_b.is_finite() {
            uniform(&mut out);
            return out;
        }
        let mut best = 0;
        for i in 1..m {
            if base[i] > base[best] || (base[i] == base[best] && stats[i].0 < stats[best].0) {
                best = i;
            }
        }
        out[stats[best].0] = 1.0;
        return out;
    }
    if !max_b.is_finite() {
        uniform(&mut out);
        return out;
    }
    let mut sum = 0.0;
    let weights: Vec<f64> = base
        .iter()
        .map(|&b| {
            let w = ((b - max_b) / tau).exp();
            sum += w;
            w
        })
        .collect();
    for (i, &(a, _, _)) in stats.iter().enumerate() {
        out[a] = weights[i] / sum;
    }
    out
}

/// Run one search from `belief` and pick a root action.
///
/// The root node is created and marked expanded before the first
/// simulation, so even a single simulation selects (and widens) at the
/// root. `record` keeps full tree statistics and raw backup values.
#[allow(clippy::too_many_arguments)]
pub fn plan<P: GenerativePomdp>(
    pomdp: &P,
    guide: &Guide,
    belief: &ParticleBelief<P::State>,
    update_cfg: &UpdateConfig,
    repr_mode: ReprMode,
    cfg: &SearchConfig,
    seed: u64,
    record: bool,
) -> PlanOutcome {
    assert!(cfg.n_online >= 1, "n_online must be at least 1");
    if cfg.bootstrap_q0 {
        assert!(
            matches!(guide, Guide::Network(_)),
            "bootstrapped Q0 needs the network guide"
        );
    }
    let mut search = Search {
        pomdp,
        guide,
        update_cfg,
        repr_mode,
        cfg,
        rng: rng::seeded(&[seed]),
        nodes: Vec::new(),
        record,
    };
    let root_seed = search.rng.next_u64();
    let root = search.make_node(belief.reseeded(root_seed), false);
    search.nodes[root].expanded = true;
    for _ in 0..cfg.n_online {
        search.simulate(root, cfg.depth);
    }

    let stats: Vec<(ActionIndex, f64, u64)> = search.nodes[root]
        .edges
        .iter()
        .map(|e| (e.action, e.q, e.n))
        .collect();
    let pi = tree_policy(&stats, cfg.tau, cfg.z_q, cfg.z_n, pomdp.action_count());
    let action = match cfg.final_criterion {
        FinalCriterion::SamplePi => sample_distribution(&pi, &mut search.rng),
        FinalCriterion::ArgmaxPi => argmax_lowest(&pi),
        FinalCriterion::RobustChild => {
            let mut best: Option<(ActionIndex, u64)> = None;
            for &(a, _, n) in &stats {
                let better = match best {
                    None => true,
                    Some((ba, bn)) => n > bn || (n == bn && a < ba),
                };
                if better {
                    best = Some((a, n));
                }
            }
            best.map(|(a, _)| a).unwrap_or(0)
        }
    };

    let root_stats = search.edge_stats(root);
    let tree = record.then(|| {
        (0..search.nodes.len())
            .map(|id| NodeStat {
                id,
                n: search.nodes[id].n,
                value: search.nodes[id].value,
                terminal: search.nodes[id].terminal,
                edges: search.edge_stats(id),
            })
            .collect()
    });
    PlanOutcome {
        action,
        pi,
        root_visits: search.nodes[root].n,
        root: root_stats,
        tree,
    }
}

/// Weighted draw from a normalized distribution.
pub fn sample_distribution(pi: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_positive = 0;
    for (i, &p) in pi.iter().enumerate() {
        if p > 0.0 {
            last_positive = i;
            acc += p;
            if u < acc {
                return i;
            }
        }
    }
    last_positive
}

/// Argmax with ties resolved to the lowest index.
pub fn argmax_lowest(xs: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..xs.len() {
        if xs[i] > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn puct_pinned_value() {
        // Q=0.5, c=1, prior=0.2, N(b)=4, N(b,a)=1 -> 0.5 + 0.2*2/2 = 0.7.
        assert!((puct_score(0.5, 1.0, 0.2, 4, 1) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn uct_pinned_value_and_unvisited() {
        let expect = 1.0 + (10.0_f64).ln().sqrt();
        assert!((uct_score(1.0, 1.0, 10, 1) - expect).abs() < 1e-12);
        assert_eq!(uct_score(0.0, 1.0, 5, 0), f64::INFINITY);
    }

    #[test]
    fn tree_policy_matches_softmax_times_counts() {
        // tau=1, z_q=z_n=1, uniform counts: weights reduce to softmax(Q).
        let stats = vec![(0, 0.0, 10), (1, 1.0, 10), (2, 2.0, 10)];
        let pi = tree_policy(&stats, 1.0, 1.0, 1.0, 3);
        let e0 = 1.0f64;
        let e1 = std::f64::consts::E;
        let e2 = e1 * e1;
        let z = e0 + e1 + e2;
        assert!((pi[0] - e0 / z).abs() < 1e-12);
        assert!((pi[1] - e1 / z).abs() < 1e-12);
        assert!((pi[2] - e2 / z).abs() < 1e-12);
    }

    #[test]
    fn tree_policy_zero_temperature_is_one_hot() {
        let stats = vec![(0, 0.3, 5), (1, 0.9, 3), (2, 0.1, 12)];
        let pi = tree_policy(&stats, 0.0, 1.0, 0.0, 3);
        assert_eq!(pi, vec![0.0, 1.0, 0.0]);
        // Count-only collapse picks the most visited.
        let pi_n = tree_policy(&stats, 0.0, 0.0, 1.0, 3);
        assert_eq!(pi_n, vec![0.0, 0.0, 1.0]);
        // Both exponents zero: uniform over the expanded set.
        let pi_u = tree_policy(&stats, 0.0, 0.0, 0.0, 3);
        for &(a, _, _) in &stats {
            assert!((pi_u[a] - 1.0 / 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tree_policy_unvisited_edges_get_zero_mass() {
        let stats = vec![(0, 1.0, 0), (2, 0.5, 4)];
        let pi = tree_policy(&stats, 1.0, 1.0, 1.0, 3);
        assert_eq!(pi[0], 0.0);
        assert_eq!(pi[1], 0.0);
        assert!((pi[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn tree_policy_zero_exponents_skip_terms() {
        // z_n = 0 must ignore counts entirely, including n = 0 edges.
        let stats = vec![(0, 0.0, 0), (1, 0.0, 100)];
        let pi = tree_policy(&stats, 1.0, 1.0, 0.0, 2);
        assert!((pi[0] - 0.5).abs() < 1e-12);
        assert!((pi[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_lowest(&[0.2, 0.5, 0.5]), 1);
        assert_eq!(argmax_lowest(&[0.5, 0.5, 0.2]), 0);
    }
}
