//! Two-head policy/value MLP with a hand-written backward pass.
//!
//! Architecture: input standardization (non-trainable running stats), a
//! shared trunk of affine(+batch-norm)+relu+dropout blocks, then one hidden
//! block per head feeding a zero-initialized output affine. The value head
//! trains on normalized returns and denormalizes at inference; the policy
//! head ends in a softmax.
//!
//! Everything is f64 and deterministic given the seed.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::TrainError;
use crate::rng;

/// Std floor shared by return normalization and input standardization.
pub const STD_FLOOR: f64 = 1e-6;

// ---------------------------------------------------------------------------
// Running statistics (Welford), used for return normalization and input
// standardization. Population variance, matching the normalization contract.

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunningStats {
    pub count: u64,
    pub mean: Vec<f64>,
    m2: Vec<f64>,
}

impl RunningStats {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Fold one sample into the running mean/variance.
    pub fn fold(&mut self, x: &[f64]) {
        assert_eq!(x.len(), self.dim());
        self.count += 1;
        let n = self.count as f64;
        for d in 0..x.len() {
            let delta = x[d] - self.mean[d];
            self.mean[d] += delta / n;
            self.m2[d] += delta * (x[d] - self.mean[d]);
        }
    }

    /// Population std with the floor applied; 1 before any data.
    pub fn std(&self, d: usize) -> f64 {
        if self.count == 0 {
            return 1.0;
        }
        (self.m2[d] / self.count as f64).sqrt().max(STD_FLOOR)
    }

    pub fn mean_at(&self, d: usize) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.mean[d]
        }
    }

    pub fn normalize(&self, g: f64) -> f64 {
        (g - self.mean_at(0)) / self.std(0)
    }

    pub fn denormalize(&self, v: f64) -> f64 {
        v * self.std(0) + self.mean_at(0)
    }

    pub fn standardize(&self, x: &mut [f64]) {
        for d in 0..x.len() {
            x[d] = (x[d] - self.mean_at(d)) / self.std(d);
        }
    }
}

// ---------------------------------------------------------------------------
// Layers

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Affine {
    /// Row-major `out x in`.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Affine {
    fn he_uniform(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / in_dim as f64).sqrt();
        let w = (0..in_dim * out_dim)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        Self {
            w,
            b: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            w: vec![0.0; in_dim * out_dim],
            b: vec![0.0; out_dim],
            in_dim,
            out_dim,
        }
    }

    /// y = W x + b for a batch laid out row-major `batch x in_dim`.
    fn forward(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let mut y = vec![0.0; batch * self.out_dim];
        for r in 0..batch {
            let xr = &x[r * self.in_dim..(r + 1) * self.in_dim];
            let yr = &mut y[r * self.out_dim..(r + 1) * self.out_dim];
            for (o, yo) in yr.iter_mut().enumerate() {
                let wrow = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                let mut acc = self.b[o];
                for (wi, xi) in wrow.iter().zip(xr) {
                    acc += wi * xi;
                }
                *yo = acc;
            }
        }
        y
    }

    /// Gradients w.r.t. weights, bias, and input given dL/dy.
    fn backward(&self, x: &[f64], dy: &[f64], batch: usize) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut dw = vec![0.0; self.w.len()];
        let mut db = vec![0.0; self.b.len()];
        let mut dx = vec![0.0; batch * self.in_dim];
        for r in 0..batch {
            let xr = &x[r * self.in_dim..(r + 1) * self.in_dim];
            let dyr = &dy[r * self.out_dim..(r + 1) * self.out_dim];
            let dxr = &mut dx[r * self.in_dim..(r + 1) * self.in_dim];
            for (o, &g) in dyr.iter().enumerate() {
                db[o] += g;
                let wrow = &self.w[o * self.in_dim..(o + 1) * self.in_dim];
                let dwrow = &mut dw[o * self.in_dim..(o + 1) * self.in_dim];
                for i in 0..self.in_dim {
                    dwrow[i] += g * xr[i];
                    dxr[i] += g * wrow[i];
                }
            }
        }
        (dw, db, dx)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub eps: f64,
}

struct BnCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl BatchNorm {
    fn new(dim: usize) -> Self {
        Self {
            gamma: vec![1.0; dim],
            beta: vec![0.0; dim],
            running_mean: vec![0.0; dim],
            running_var: vec![1.0; dim],
            eps: 1e-5,
        }
    }

    /// Train-mode forward on batch statistics (biased variance). When
    /// `momentum` is set, running stats move by
    /// `running = (1 - m) * running + m * batch`.
    fn forward_train(
        &mut self,
        x: &[f64],
        batch: usize,
        momentum: Option<f64>,
    ) -> (Vec<f64>, BnCache) {
        let dim = self.gamma.len();
        let bf = batch as f64;
        let mut mean = vec![0.0; dim];
        let mut var = vec![0.0; dim];
        for r in 0..batch {
            for d in 0..dim {
                mean[d] += x[r * dim + d];
            }
        }
        for m in mean.iter_mut() {
            *m /= bf;
        }
        for r in 0..batch {
            for d in 0..dim {
                let diff = x[r * dim + d] - mean[d];
                var[d] += diff * diff;
            }
        }
        for v in var.iter_mut() {
            *v /= bf;
        }
        if let Some(m) = momentum {
            for d in 0..dim {
                self.running_mean[d] = (1.0 - m) * self.running_mean[d] + m * mean[d];
                self.running_var[d] = (1.0 - m) * self.running_var[d] + m * var[d];
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|&v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut y = vec![0.0; x.len()];
        for r in 0..batch {
            for d in 0..dim {
                let h = (x[r * dim + d] - mean[d]) * inv_std[d];
                xhat[r * dim + d] = h;
                y[r * dim + d] = self.gamma[d] * h + self.beta[d];
            }
        }
        (y, BnCache { xhat, inv_std })
    }

    fn forward_eval(&self, x: &[f64], batch: usize) -> Vec<f64> {
        let dim = self.gamma.len();
        let mut y = vec![0.0; x.len()];
        for r in 0..batch {
            for d in 0..dim {
                let h = (x[r * dim + d] - self.running_mean[d])
                    / (self.running_var[d] + self.eps).sqrt();
                y[r * dim + d] = self.gamma[d] * h + self.beta[d];
            }
        }
        y
    }

    fn backward(
        &self,
        cache: &BnCache,
        dy: &[f64],
        batch: usize,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let dim = self.gamma.len();
        let bf = batch as f64;
        let mut dgamma = vec![0.0; dim];
        let mut dbeta = vec![0.0; dim];
        let mut sum_dxhat = vec![0.0; dim];
        let mut sum_dxhat_xhat = vec![0.0; dim];
        for r in 0..batch {
            for d in 0..dim {
                let g = dy[r * dim + d];
                let h = cache.xhat[r * dim + d];
                dgamma[d] += g * h;
                dbeta[d] += g;
                let dxhat = g * self.gamma[d];
                sum_dxhat[d] += dxhat;
                sum_dxhat_xhat[d] += dxhat * h;
            }
        }
        let mut dx = vec![0.0; dy.len()];
        for r in 0..batch {
            for d in 0..dim {
                let dxhat = dy[r * dim + d] * self.gamma[d];
                dx[r * dim + d] = cache.inv_std[d] / bf
                    * (bf * dxhat - sum_dxhat[d] - cache.xhat[r * dim + d] * sum_dxhat_xhat[d]);
            }
        }
        (dgamma, dbeta, dx)
    }
}

/// Affine + optional batch-norm + relu + dropout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Block {
    pub lin: Affine,
    pub bn: Option<BatchNorm>,
}

impl Block {
    fn new(in_dim: usize, out_dim: usize, batch_norm: bool, rng: &mut ChaCha8Rng) -> Self {
        Self {
            lin: Affine::he_uniform(in_dim, out_dim, rng),
            bn: batch_norm.then(|| BatchNorm::new(out_dim)),
        }
    }
}

struct BlockCache {
    /// Block input.
    x: Vec<f64>,
    bn: Option<BnCache>,
    /// Relu input (post-bn), for the relu mask.
    relu_in: Vec<f64>,
    /// Dropout keep mask.
    mask: Vec<bool>,
    /// Block output.
    out: Vec<f64>,
}

struct BlockGrads {
    dw: Vec<f64>,
    db: Vec<f64>,
    dgamma: Option<Vec<f64>>,
    dbeta: Option<Vec<f64>>,
}

// ---------------------------------------------------------------------------
// Network

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArchSpec {
    pub input_dim: usize,
    pub action_dim: usize,
    pub hidden_width: usize,
    pub trunk_layers: usize,
    pub batch_norm: bool,
    pub dropout: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Net {
    pub arch: ArchSpec,
    pub input_stats: RunningStats,
    pub return_stats: RunningStats,
    trunk: Vec<Block>,
    value_hidden: Block,
    value_out: Affine,
    policy_hidden: Block,
    policy_out: Affine,
}

/// One training example: belief summary, visit-derived policy target, and
/// (unnormalized) discounted return.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainSample {
    pub repr: Vec<f64>,
    pub pi: Vec<f64>,
    pub g: f64,
}

/// Layer shapes for conformance checks: (name, in_dim, out_dim, batch_norm).
pub type LayerShape = (String, usize, usize, bool);

impl Net {
    /// Hidden affines are He-uniform (U[-sqrt(6/fan_in), +sqrt(6/fan_in)]);
    /// both head output affines start at zero so the initial policy is
    /// uniform and the initial value estimate is zero.
    pub fn new(arch: ArchSpec, seed: u64) -> Self {
        assert!(
            arch.trunk_layers <= TRUNK_NAMES.len(),
            "at most {} trunk layers",
            TRUNK_NAMES.len()
        );
        let mut r = rng::seeded(&[seed, rng::tags::NET_INIT]);
        let w = arch.hidden_width;
        let mut trunk = Vec::new();
        let mut d = arch.input_dim;
        for _ in 0..arch.trunk_layers {
            trunk.push(Block::new(d, w, arch.batch_norm, &mut r));
            d = w;
        }
        Self {
            input_stats: RunningStats::new(arch.input_dim),
            return_stats: RunningStats::new(1),
            value_hidden: Block::new(w, w, arch.batch_norm, &mut r),
            value_out: Affine::zeros(w, 1),
            policy_hidden: Block::new(w, w, arch.batch_norm, &mut r),
            policy_out: Affine::zeros(w, arch.action_dim),
            trunk,
            arch,
        }
    }

    /// Trainable layer shapes, trunk first, then value head, then policy
    /// head.
    pub fn layer_shapes(&self) -> Vec<LayerShape> {
        let mut out = Vec::new();
        for (i, b) in self.trunk.iter().enumerate() {
            out.push((format!("trunk{i}"), b.lin.in_dim, b.lin.out_dim, b.bn.is_some()));
        }
        out.push((
            "value_hidden".into(),
            self.value_hidden.lin.in_dim,
            self.value_hidden.lin.out_dim,
            self.value_hidden.bn.is_some(),
        ));
        out.push((
            "value_out".into(),
            self.value_out.in_dim,
            self.value_out.out_dim,
            false,
        ));
        out.push((
            "policy_hidden".into(),
            self.policy_hidden.lin.in_dim,
            self.policy_hidden.lin.out_dim,
            self.policy_hidden.bn.is_some(),
        ));
        out.push((
            "policy_out".into(),
            self.policy_out.in_dim,
            self.policy_out.out_dim,
            false,
        ));
        out
    }

    /// Inference on one belief summary: (action probabilities, value).
    /// Dropout is disabled, batch-norm uses running stats, and the value is
    /// denormalized back to the return scale.
    pub fn eval(&self, repr: &[f64]) -> (Vec<f64>, f64) {
        assert_eq!(repr.len(), self.arch.input_dim, "belief summary dim");
        let mut x = repr.to_vec();
        self.input_stats.standardize(&mut x);
        for b in &self.trunk {
            x = eval_block(b, &x, 1);
        }
        let hv = eval_block(&self.value_hidden, &x, 1);
        let v = self.value_out.forward(&hv, 1)[0];
        let hp = eval_block(&self.policy_hidden, &x, 1);
        let logits = self.policy_out.forward(&hp, 1);
        (softmax(&logits), self.return_stats.denormalize(v))
    }

    // -- parameter plumbing ------------------------------------------------

    fn blocks(&self) -> Vec<(&str, &Block)> {
        let mut v: Vec<(&str, &Block)> = Vec::new();
        for (i, b) in self.trunk.iter().enumerate() {
            v.push((TRUNK_NAMES[i], b));
        }
        v.push(("value_hidden", &self.value_hidden));
        v.push(("policy_hidden", &self.policy_hidden));
        v
    }

    /// All trainable parameters flattened in a fixed order.
    pub fn params_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (_, b) in self.blocks() {
            out.extend_from_slice(&b.lin.w);
            out.extend_from_slice(&b.lin.b);
            if let Some(bn) = &b.bn {
                out.extend_from_slice(&bn.gamma);
                out.extend_from_slice(&bn.beta);
            }
        }
        out.extend_from_slice(&self.value_out.w);
        out.extend_from_slice(&self.value_out.b);
        out.extend_from_slice(&self.policy_out.w);
        out.extend_from_slice(&self.policy_out.b);
        out
    }

    pub fn set_params_flat(&mut self, flat: &[f64]) {
        let mut pos = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&flat[pos..pos + dst.len()]);
            pos += dst.len();
        };
        for b in self
            .trunk
            .iter_mut()
            .chain([&mut self.value_hidden, &mut self.policy_hidden])
        {
            take(&mut b.lin.w);
            take(&mut b.lin.b);
            if let Some(bn) = &mut b.bn {
                take(&mut bn.gamma);
                take(&mut bn.beta);
            }
        }
        take(&mut self.value_out.w);
        take(&mut self.value_out.b);
        take(&mut self.policy_out.w);
        take(&mut self.policy_out.b);
        assert_eq!(pos, flat.len(), "parameter length mismatch");
    }

    pub fn param_count(&self) -> usize {
        self.params_flat().len()
    }

    /// (name, length) of each parameter slice in flat order, for divergence
    /// reporting.
    pub fn param_slices(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (name, b) in self.blocks() {
            out.push((format!("{name}.w"), b.lin.w.len()));
            out.push((format!("{name}.b"), b.lin.b.len()));
            if let Some(bn) = &b.bn {
                out.push((format!("{name}.bn_gamma"), bn.gamma.len()));
                out.push((format!("{name}.bn_beta"), bn.beta.len()));
            }
        }
        out.push(("value_out.w".into(), self.value_out.w.len()));
        out.push(("value_out.b".into(), self.value_out.b.len()));
        out.push(("policy_out.w".into(), self.policy_out.w.len()));
        out.push(("policy_out.b".into(), self.policy_out.b.len()));
        out
    }
}

const TRUNK_NAMES: [&str; 8] = [
    "trunk0", "trunk1", "trunk2", "trunk3", "trunk4", "trunk5", "trunk6", "trunk7",
];

fn eval_block(b: &Block, x: &[f64], batch: usize) -> Vec<f64> {
    let mut z = b.lin.forward(x, batch);
    if let Some(bn) = &b.bn {
        z = bn.forward_eval(&z, batch);
    }
    for v in z.iter_mut() {
        *v = v.max(0.0);
    }
    z
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in out.iter_mut() {
        *v /= sum;
    }
    out
}

// ---------------------------------------------------------------------------
// Training

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Rmsprop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValueLoss {
    Mse,
    Mae,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    /// L2 coefficient over the full parameter vector (loss term
    /// `l2 * ||theta||^2`, gradient `2 * l2 * theta`).
    pub l2: f64,
    pub batch_size: usize,
    pub train_fraction: f64,
    pub optimizer: OptimizerKind,
    pub value_loss: ValueLoss,
    pub bn_momentum: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainReport {
    /// Mean losses over the final epoch's batches.
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Eval-mode losses on the held-back validation split (logged only).
    pub val_policy_loss: f64,
    pub val_value_loss: f64,
    pub steps: usize,
}

/// A fresh optimizer is built per `train` call; state is never checkpointed.
enum Optimizer {
    Adam {
        m: Vec<f64>,
        v: Vec<f64>,
        t: u64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
    Rmsprop {
        acc: Vec<f64>,
        rho: f64,
        eps: f64,
    },
}

impl Optimizer {
    fn new(kind: OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam {
                m: vec![0.0; n],
                v: vec![0.0; n],
                t: 0,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
            },
            OptimizerKind::Rmsprop => Optimizer::Rmsprop {
                acc: vec![0.0; n],
                rho: 0.9,
                eps: 1e-8,
            },
        }
    }

    fn step(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            Optimizer::Adam {
                m,
                v,
                t,
                beta1,
                beta2,
                eps,
            } => {
                *t += 1;
                let b1c = 1.0 - beta1.powi(*t as i32);
                let b2c = 1.0 - beta2.powi(*t as i32);
                for i in 0..theta.len() {
                    m[i] = *beta1 * m[i] + (1.0 - *beta1) * grad[i];
                    v[i] = *beta2 * v[i] + (1.0 - *beta2) * grad[i] * grad[i];
                    let mhat = m[i] / b1c;
                    let vhat = v[i] / b2c;
                    theta[i] -= lr * mhat / (vhat.sqrt() + *eps);
                }
            }
            Optimizer::Rmsprop { acc, rho, eps } => {
                for i in 0..theta.len() {
                    acc[i] = *rho * acc[i] + (1.0 - *rho) * grad[i] * grad[i];
                    theta[i] -= lr * grad[i] / (acc[i].sqrt() + *eps);
                }
            }
        }
    }
}

/// Dropout masks for one forward pass, in block order
/// (trunk..., value_hidden, policy_hidden).
pub struct MaskSet {
    masks: Vec<Vec<bool>>,
}

struct ForwardCaches {
    trunk: Vec<BlockCache>,
    value_hidden: BlockCache,
    policy_hidden: BlockCache,
    value_pred: Vec<f64>,
    policy_logits: Vec<f64>,
}

fn sample_mask(len: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<bool> {
    if p <= 0.0 {
        return vec![true; len];
    }
    (0..len).map(|_| rng.gen::<f64>() >= p).collect()
}

fn train_block(
    b: &mut Block,
    x: Vec<f64>,
    batch: usize,
    p: f64,
    mask: Vec<bool>,
    momentum: Option<f64>,
) -> BlockCache {
    let z = b.lin.forward(&x, batch);
    let (relu_in, bn_cache) = match &mut b.bn {
        Some(bn) => {
            let (y, c) = bn.forward_train(&z, batch, momentum);
            (y, Some(c))
        }
        None => (z.clone(), None),
    };
    let keep = 1.0 - p;
    let mut out = vec![0.0; relu_in.len()];
    for i in 0..out.len() {
        let h = relu_in[i].max(0.0);
        out[i] = if mask[i] { h / keep } else { 0.0 };
    }
    BlockCache {
        x,
        bn: bn_cache,
        relu_in,
        mask,
        out,
    }
}

fn backward_block(b: &Block, cache: &BlockCache, dout: &[f64], batch: usize, p: f64) -> (BlockGrads, Vec<f64>) {
    let keep = 1.0 - p;
    let mut dy = vec![0.0; dout.len()];
    for i in 0..dout.len() {
        if cache.mask[i] && cache.relu_in[i] > 0.0 {
            dy[i] = dout[i] / keep;
        }
    }
    let (dgamma, dbeta, dz) = match (&b.bn, &cache.bn) {
        (Some(bn), Some(c)) => {
            let (dg, dbt, dz) = bn.backward(c, &dy, batch);
            (Some(dg), Some(dbt), dz)
        }
        _ => (None, None, dy),
    };
    let (dw, db, dx) = b.lin.backward(&cache.x, &dz, batch);
    (
        BlockGrads {
            dw,
            db,
            dgamma,
            dbeta,
        },
        dx,
    )
}

/// Train-mode forward over a batch. `masks`: `None` samples fresh dropout
/// masks from `rng`; `Some` reuses a recorded set (gradient checking).
/// `update_running` gates the batch-norm running-stat update.
fn forward_train(
    net: &mut Net,
    x: Vec<f64>,
    batch: usize,
    cfg: &TrainConfig,
    masks: Option<&MaskSet>,
    rng: &mut ChaCha8Rng,
    update_running: bool,
) -> (ForwardCaches, MaskSet) {
    let p = net.arch.dropout;
    let w = net.arch.hidden_width;
    let momentum = update_running.then_some(cfg.bn_momentum);
    let n_blocks = net.arch.trunk_layers + 2;
    let mut mask_list: Vec<Vec<bool>> = Vec::with_capacity(n_blocks);
    match masks {
        Some(m) => mask_list = m.masks.clone(),
        None => {
            for _ in 0..n_blocks {
                mask_list.push(sample_mask(batch * w, p, rng));
            }
        }
    }

    let mut cur = x;
    let mut trunk_caches = Vec::with_capacity(net.arch.trunk_layers);
    for (i, b) in net.trunk.iter_mut().enumerate() {
        let c = train_block(b, cur, batch, p, mask_list[i].clone(), momentum);
        cur = c.out.clone();
        trunk_caches.push(c);
    }
    let vh = train_block(
        &mut net.value_hidden,
        cur.clone(),
        batch,
        p,
        mask_list[net.arch.trunk_layers].clone(),
        momentum,
    );
    let ph = train_block(
        &mut net.policy_hidden,
        cur,
        batch,
        p,
        mask_list[net.arch.trunk_layers + 1].clone(),
        momentum,
    );
    let value_pred = net.value_out.forward(&vh.out, batch);
    let policy_logits = net.policy_out.forward(&ph.out, batch);
    (
        ForwardCaches {
            trunk: trunk_caches,
            value_hidden: vh,
            policy_hidden: ph,
            value_pred,
            policy_logits,
        },
        MaskSet { masks: mask_list },
    )
}

/// Combined loss on a prepared batch (targets already normalized):
/// value MSE/MAE + policy cross-entropy + l2 * ||theta||^2.
fn batch_loss(
    caches: &ForwardCaches,
    g_norm: &[f64],
    pi: &[f64],
    action_dim: usize,
    cfg: &TrainConfig,
    l2_term: f64,
) -> (f64, f64, f64) {
    let batch = g_norm.len();
    let bf = batch as f64;
    let mut lv = 0.0;
    for (r, &g) in g_norm.iter().enumerate() {
        let diff = caches.value_pred[r] - g;
        lv += match cfg.value_loss {
            ValueLoss::Mse => diff * diff,
            ValueLoss::Mae => diff.abs(),
        };
    }
    lv /= bf;
    let mut lp = 0.0;
    for r in 0..batch {
        let logits = &caches.policy_logits[r * action_dim..(r + 1) * action_dim];
        let lse = log_sum_exp(logits);
        for a in 0..action_dim {
            let target = pi[r * action_dim + a];
            if target > 0.0 {
                lp -= target * (logits[a] - lse);
            }
        }
    }
    lp /= bf;
    (lv + lp + l2_term, lv, lp)
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + xs.iter().map(|&x| (x - max).exp()).sum::<f64>().ln()
}

/// Backward pass producing the flat gradient (without the L2 term).
fn backward(
    net: &Net,
    caches: &ForwardCaches,
    g_norm: &[f64],
    pi: &[f64],
    cfg: &TrainConfig,
) -> Vec<f64> {
    let batch = g_norm.len();
    let bf = batch as f64;
    let a_dim = net.arch.action_dim;
    let p = net.arch.dropout;

    let mut dv = vec![0.0; batch];
    for r in 0..batch {
        let diff = caches.value_pred[r] - g_norm[r];
        dv[r] = match cfg.value_loss {
            ValueLoss::Mse => 2.0 * diff / bf,
            ValueLoss::Mae => diff.signum() / bf,
        };
    }
    let mut dlogits = vec![0.0; batch * a_dim];
    for r in 0..batch {
        let logits = &caches.policy_logits[r * a_dim..(r + 1) * a_dim];
        let probs = softmax(logits);
        for a in 0..a_dim {
            dlogits[r * a_dim + a] = (probs[a] - pi[r * a_dim + a]) / bf;
        }
    }

    let (dw_vo, db_vo, d_vh_out) = net.value_out.backward(&caches.value_hidden.out, &dv, batch);
    let (dw_po, db_po, d_ph_out) = net
        .policy_out
        .backward(&caches.policy_hidden.out, &dlogits, batch);
    let (g_vh, dx_v) = backward_block(&net.value_hidden, &caches.value_hidden, &d_vh_out, batch, p);
    let (g_ph, dx_p) = backward_block(
        &net.policy_hidden,
        &caches.policy_hidden,
        &d_ph_out,
        batch,
        p,
    );
    let mut dtrunk_out: Vec<f64> = dx_v.iter().zip(&dx_p).map(|(a, b)| a + b).collect();
    let mut trunk_grads: Vec<BlockGrads> = Vec::with_capacity(net.trunk.len());
    for (b, c) in net.trunk.iter().zip(&caches.trunk).rev() {
        let (g, dx) = backward_block(b, c, &dtrunk_out, batch, p);
        trunk_grads.push(g);
        dtrunk_out = dx;
    }
    trunk_grads.reverse();

    // Flatten in the same order as params_flat.
    let mut flat = Vec::with_capacity(net.param_count());
    let mut push_block = |g: &BlockGrads| {
        flat.extend_from_slice(&g.dw);
        flat.extend_from_slice(&g.db);
        if let Some(dg) = &g.dgamma {
            flat.extend_from_slice(dg);
        }
        if let Some(db) = &g.dbeta {
            flat.extend_from_slice(db);
        }
    };
    for g in &trunk_grads {
        push_block(g);
    }
    push_block(&g_vh);
    push_block(&g_ph);
    flat.extend_from_slice(&dw_vo);
    flat.extend_from_slice(&db_vo);
    flat.extend_from_slice(&dw_po);
    flat.extend_from_slice(&db_po);
    flat
}

fn check_finite(net: &Net, flat: &[f64], quantity: &'static str) -> Result<(), TrainError> {
    if flat.iter().all(|v| v.is_finite()) {
        return Ok(());
    }
    let mut pos = 0;
    for (name, len) in net.param_slices() {
        if flat[pos..pos + len].iter().any(|v| !v.is_finite()) {
            return Err(TrainError::Divergence {
                layer: name,
                quantity,
            });
        }
        pos += len;
    }
    unreachable!("non-finite value not located in any slice");
}

fn gather_batch(
    net: &Net,
    samples: &[TrainSample],
    idx: &[usize],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let in_dim = net.arch.input_dim;
    let a_dim = net.arch.action_dim;
    let mut x = Vec::with_capacity(idx.len() * in_dim);
    let mut pi = Vec::with_capacity(idx.len() * a_dim);
    let mut g = Vec::with_capacity(idx.len());
    for &i in idx {
        let s = &samples[i];
        debug_assert_eq!(s.repr.len(), in_dim);
        debug_assert_eq!(s.pi.len(), a_dim);
        let start = x.len();
        x.extend_from_slice(&s.repr);
        net.input_stats.standardize(&mut x[start..]);
        pi.extend_from_slice(&s.pi);
        g.push(net.return_stats.normalize(s.g));
    }
    (x, pi, g)
}

/// Run `cfg.epochs` of minibatch SGD on `samples` (already folded into the
/// net's running stats by the caller). The last `1 - train_fraction` of a
/// seeded shuffle is held back for eval-mode validation losses.
pub fn train(
    net: &mut Net,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainReport, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut r = rng::seeded(&[seed, rng::tags::TRAIN]);
    let mut idx: Vec<usize> = (0..samples.len()).collect();
    idx.shuffle(&mut r);
    let n_train = ((samples.len() as f64 * cfg.train_fraction).floor() as usize)
        .clamp(1, samples.len());
    let (train_idx, val_idx) = idx.split_at(n_train);
    let mut train_idx = train_idx.to_vec();

    let mut theta = net.params_flat();
    let mut opt = Optimizer::new(cfg.optimizer, theta.len());
    let batch_size = cfg.batch_size.min(n_train).max(1);

    let mut last_lv = 0.0;
    let mut last_lp = 0.0;
    let mut steps = 0;
    for _epoch in 0..cfg.epochs {
        train_idx.shuffle(&mut r);
        let mut epoch_lv = 0.0;
        let mut epoch_lp = 0.0;
        let mut n_batches = 0;
        for chunk in train_idx.chunks(batch_size) {
            net.set_params_flat(&theta);
            let (x, pi, g) = gather_batch(net, samples, chunk);
            let l2_term: f64 = cfg.l2 * theta.iter().map(|t| t * t).sum::<f64>();
            let (caches, _masks) =
                forward_train(net, x, chunk.len(), cfg, None, &mut r, true);
            let (total, lv, lp) = batch_loss(&caches, &g, &pi, net.arch.action_dim, cfg, l2_term);
            if !total.is_finite() {
                return Err(TrainError::Divergence {
                    layer: "loss".into(),
                    quantity: "loss",
                });
            }
            let mut grad = backward(net, &caches, &g, &pi, cfg);
            for (gi, ti) in grad.iter_mut().zip(theta.iter()) {
                *gi += 2.0 * cfg.l2 * ti;
            }
            check_finite(net, &grad, "gradient")?;
            opt.step(&mut theta, &grad, cfg.learning_rate);
            check_finite(net, &theta, "parameter")?;
            epoch_lv += lv;
            epoch_lp += lp;
            n_batches += 1;
            steps += 1;
        }
        last_lv = epoch_lv / n_batches as f64;
        last_lp = epoch_lp / n_batches as f64;
    }
    net.set_params_flat(&theta);

    let (val_lv, val_lp) = if val_idx.is_empty() {
        (f64::NAN, f64::NAN)
    } else {
        validation_loss(net, samples, val_idx)
    };
    Ok(TrainReport {
        policy_loss: last_lp,
        value_loss: last_lv,
        val_policy_loss: val_lp,
        val_value_loss: val_lv,
        steps,
    })
}

/// Eval-mode (no dropout, running batch-norm stats) value and policy losses.
fn validation_loss(net: &Net, samples: &[TrainSample], idx: &[usize]) -> (f64, f64) {
    let mut lv = 0.0;
    let mut lp = 0.0;
    for &i in idx {
        let s = &samples[i];
        let mut x = s.repr.clone();
        net.input_stats.standardize(&mut x);
        let mut cur = x;
        for b in &net.trunk {
            cur = eval_block(b, &cur, 1);
        }
        let hv = eval_block(&net.value_hidden, &cur, 1);
        let v = net.value_out.forward(&hv, 1)[0];
        let hp = eval_block(&net.policy_hidden, &cur, 1);
        let logits = net.policy_out.forward(&hp, 1);
        let g = net.return_stats.normalize(s.g);
        let diff = v - g;
        lv += diff * diff;
        let lse = log_sum_exp(&logits);
        for (a, &t) in s.pi.iter().enumerate() {
            if t > 0.0 {
                lp -= t * (logits[a] - lse);
            }
        }
    }
    (lv / idx.len() as f64, lp / idx.len() as f64)
}

/// Central-difference gradient check on one batch with frozen dropout
/// masks. Returns the maximum relative error over all parameters.
pub fn gradient_check(
    net: &mut Net,
    samples: &[TrainSample],
    cfg: &TrainConfig,
    seed: u64,
    epsilon: f64,
) -> f64 {
    let mut r = rng::seeded(&[seed, rng::tags::TRAIN, 17]);
    let idx: Vec<usize> = (0..samples.len()).collect();
    let theta0 = net.params_flat();

    let loss_at = |net: &mut Net, theta: &[f64], masks: &MaskSet, r: &mut ChaCha8Rng| -> f64 {
        net.set_params_flat(theta);
        let (x, pi, g) = gather_batch(net, samples, &idx);
        let l2_term: f64 = cfg.l2 * theta.iter().map(|t| t * t).sum::<f64>();
        let (caches, _) = forward_train(net, x, idx.len(), cfg, Some(masks), r, false);
        batch_loss(&caches, &g, &pi, net.arch.action_dim, cfg, l2_term).0
    };

    // One pass to record masks and analytic gradients.
    net.set_params_flat(&theta0);
    let (x, pi, g) = gather_batch(net, samples, &idx);
    let (caches, masks) = forward_train(net, x, idx.len(), cfg, None, &mut r, false);
    let mut analytic = backward(net, &caches, &g, &pi, cfg);
    for (gi, ti) in analytic.iter_mut().zip(theta0.iter()) {
        *gi += 2.0 * cfg.l2 * ti;
    }

    let mut max_rel = 0.0;
    let mut theta = theta0.clone();
    for i in 0..theta.len() {
        theta[i] = theta0[i] + epsilon;
        let lp = loss_at(net, &theta, &masks, &mut r);
        theta[i] = theta0[i] - epsilon;
        let lm = loss_at(net, &theta, &masks, &mut r);
        theta[i] = theta0[i];
        let fd = (lp - lm) / (2.0 * epsilon);
        let rel = (fd - analytic[i]).abs() / (fd.abs() + analytic[i].abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    net.set_params_flat(&theta0);
    max_rel
}

// ---------------------------------------------------------------------------
// Checkpointing

/// Serialize the full inference state (parameters, architecture, input and
/// return statistics) as JSON. Shortest-roundtrip float printing makes the
/// save/load cycle bit-exact.
pub fn save_checkpoint(net: &Net, path: &std::path::Path) -> std::io::Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    serde_json::to_writer(&mut w, net).map_err(std::io::Error::other)?;
    std::io::Write::flush(&mut w)
}

pub fn load_checkpoint(path: &std::path::Path) -> std::io::Result<Net> {
    let file = std::fs::File::open(path)?;
    serde_json::from_reader(std::io::BufReader::new(file)).map_err(std::io::Error::other)
}
