//! Variational autoencoder shared by every node and index.
//!
//! Input is one node feature vector: the continuous part standardized with
//! training statistics, followed by the 0/1 adjacency indicators. The objective
//! per example is squared reconstruction error on the continuous part, the
//! closed-form KL divergence of the diagonal Gaussian posterior from N(0, I),
//! and binary cross-entropy on the discrete part. Embeddings are the encoder mean.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{bail, Error, Result};
use crate::features::{FeatureLayout, NodeFeatures};
use crate::series::YearMonth;

pub const CHECKPOINT_VERSION: u32 = 1;
/// Discrete decoder outputs are clipped to `[PROB_CLIP, 1 − PROB_CLIP]`.
pub const PROB_CLIP: f64 = 1e-7;

/// Encoder/decoder layer stack. Only dense feed-forward stacks are implemented.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Hidden widths of the encoder; the decoder mirrors them.
    FeedForward { hidden: Vec<usize> },
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture::FeedForward { hidden: vec![96, 48, 24] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
struct Dense {
    inputs: usize,
    outputs: usize,
    offset: usize,
}

impl Dense {
    fn len(&self) -> usize {
        self.inputs * self.outputs + self.outputs
    }

    fn forward(&self, params: &[f64], x: &[f64], out: &mut Vec<f64>) {
        let w = &params[self.offset..self.offset + self.inputs * self.outputs];
        let b = &params[self.offset + self.inputs * self.outputs..self.offset + self.len()];
        out.clear();
        out.extend(w.chunks_exact(self.inputs).zip(b).map(|(row, bias)| {
            let mut s = *bias;
            for (a, v) in row.iter().zip(x) {
                s += a * v;
            }
            s
        }));
    }

    /// Accumulates parameter gradients; writes `dx = Wᵀ dy` into `dx` when provided.
    fn backward(&self, params: &[f64], grad: &mut [f64], x: &[f64], dy: &[f64], dx: Option<&mut Vec<f64>>) {
        let wlen = self.inputs * self.outputs;
        {
            let (gw, gb) = grad[self.offset..self.offset + self.len()].split_at_mut(wlen);
            for (o, d) in dy.iter().enumerate() {
                gb[o] += d;
                let row = &mut gw[o * self.inputs..(o + 1) * self.inputs];
                for (g, v) in row.iter_mut().zip(x) {
                    *g += d * v;
                }
            }
        }
        if let Some(dx) = dx {
            let w = &params[self.offset..self.offset + wlen];
            dx.clear();
            dx.resize(self.inputs, 0.0);
            for (o, d) in dy.iter().enumerate() {
                for (acc, a) in dx.iter_mut().zip(&w[o * self.inputs..(o + 1) * self.inputs]) {
                    *acc += a * d;
                }
            }
        }
    }
}

/// Shapes and parameter offsets of the network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeLayout {
    pub continuous: usize,
    pub discrete: usize,
    pub latent: usize,
    pub architecture: Architecture,
    encoder: Vec<Dense>,
    mean_head: Dense,
    logvar_head: Dense,
    decoder: Vec<Dense>,
    output: Dense,
    param_count: usize,
}

impl VaeLayout {
    pub fn new(continuous: usize, discrete: usize, latent: usize, architecture: Architecture) -> Result<Self> {
        let Architecture::FeedForward { hidden } = &architecture;
        if continuous + discrete == 0 || latent == 0 || hidden.contains(&0) {
            bail!(Validation, "layer sizes must be positive");
        }
        let mut offset = 0;
        let mut dense = |inputs: usize, outputs: usize| {
            let d = Dense { inputs, outputs, offset };
            offset += d.len();
            d
        };
        let input = continuous + discrete;
        let mut encoder = Vec::new();
        let mut prev = input;
        for &h in hidden {
            encoder.push(dense(prev, h));
            prev = h;
        }
        let mean_head = dense(prev, latent);
        let logvar_head = dense(prev, latent);
        let mut decoder = Vec::new();
        let mut prev = latent;
        for &h in hidden.iter().rev() {
            decoder.push(dense(prev, h));
            prev = h;
        }
        let output = dense(prev, input);
        Ok(Self {
            continuous,
            discrete,
            latent,
            architecture,
            encoder,
            mean_head,
            logvar_head,
            decoder,
            output,
            param_count: offset,
        })
    }

    pub fn input_len(&self) -> usize {
        self.continuous + self.discrete
    }

    pub fn param_count(&self) -> usize {
        self.param_count
    }

    fn all_layers(&self) -> impl Iterator<Item = &Dense> {
        self.encoder
            .iter()
            .chain([&self.mean_head, &self.logvar_head])
            .chain(self.decoder.iter())
            .chain([&self.output])
    }

    /// Offset range of the two encoder heads (mean then log-variance), weights and biases.
    pub fn head_ranges(&self) -> [core::ops::Range<usize>; 2] {
        [
            self.mean_head.offset..self.mean_head.offset + self.mean_head.len(),
            self.logvar_head.offset..self.logvar_head.offset + self.logvar_head.len(),
        ]
    }

    /// Offset range of the output layer's biases.
    pub fn output_bias_range(&self) -> core::ops::Range<usize> {
        let start = self.output.offset + self.output.inputs * self.output.outputs;
        start..start + self.output.outputs
    }

    /// Offset range of every decoder parameter, output layer included.
    pub fn decoder_range(&self) -> core::ops::Range<usize> {
        let start = self.decoder.first().unwrap_or(&self.output).offset;
        start..self.param_count
    }
}

/// Per-column affine map applied to the continuous features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Zero-variance columns keep scale 1.
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]> + Clone, dim: usize) -> Self {
        let mut mean = vec![0.0; dim];
        let mut n = 0usize;
        for r in rows.clone() {
            n += 1;
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        let nf = n.max(1) as f64;
        mean.iter_mut().for_each(|m| *m /= nf);
        let mut var = vec![0.0; dim];
        for r in rows {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let scale = var
            .iter()
            .map(|v| {
                let sd = libm::sqrt(v / nf);
                if sd > 1e-12 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn apply_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.extend(x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s));
    }
}

/// Trained network, standardization and provenance, as written to checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaeParams {
    pub version: u32,
    pub layout: VaeLayout,
    pub feature_layout: FeatureLayout,
    pub standardizer: Standardizer,
    pub seed: u64,
    pub weights: Vec<f64>,
}

impl VaeParams {
    /// Uniform Glorot initialization, zero biases.
    pub fn init(feature_layout: FeatureLayout, latent: usize, architecture: Architecture, seed: u64) -> Result<Self> {
        let layout = VaeLayout::new(feature_layout.continuous_len(), feature_layout.discrete_len(), latent, architecture)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = vec![0.0; layout.param_count()];
        for d in layout.all_layers() {
            let limit = libm::sqrt(6.0 / (d.inputs + d.outputs) as f64);
            for w in &mut weights[d.offset..d.offset + d.inputs * d.outputs] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(Self {
            version: CHECKPOINT_VERSION,
            standardizer: Standardizer::identity(layout.continuous),
            layout,
            feature_layout,
            seed,
            weights,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.layout.latent
    }

    pub fn check_version(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            bail!(
                Validation,
                "checkpoint version {} does not match supported version {CHECKPOINT_VERSION}",
                self.version
            );
        }
        if self.weights.len() != self.layout.param_count() {
            bail!(
                Validation,
                "checkpoint holds {} weights, layout needs {}",
                self.weights.len(),
                self.layout.param_count()
            );
        }
        Ok(())
    }

    fn input(&self, f: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let c = self.layout.continuous;
        self.standardizer.apply_into(&f[..c], out);
        out.extend_from_slice(&f[c..]);
    }
}

/// Components of the objective, averaged over a batch.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub reconstruction: f64,
    pub kl: f64,
    pub bce: f64,
}

impl LossBreakdown {
    fn add(&mut self, o: &LossBreakdown) {
        self.total += o.total;
        self.reconstruction += o.reconstruction;
        self.kl += o.kl;
        self.bce += o.bce;
    }

    fn scale(&mut self, s: f64) {
        self.total *= s;
        self.reconstruction *= s;
        self.kl *= s;
        self.bce *= s;
    }

    fn check(&self) -> Result<()> {
        for (name, v) in [("reconstruction", self.reconstruction), ("kl", self.kl), ("bce", self.bce)] {
            if !v.is_finite() {
                bail!(Numeric, "non-finite {name} loss component");
            }
        }
        Ok(())
    }
}

#[derive(Default)]
struct Workspace {
    enc: Vec<Vec<f64>>,
    mean: Vec<f64>,
    logvar: Vec<f64>,
    z: Vec<f64>,
    dec: Vec<Vec<f64>>,
    out: Vec<f64>,
    tmp: Vec<f64>,
    d_a: Vec<f64>,
    d_b: Vec<f64>,
    d_mean: Vec<f64>,
    d_logvar: Vec<f64>,
}

fn tanh_in_place(v: &mut [f64]) {
    v.iter_mut().for_each(|x| *x = libm::tanh(*x));
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Loss for one standardized input; accumulates the gradient when `grad` is given.
fn example(params: &VaeParams, x: &[f64], noise: &[f64], ws: &mut Workspace, grad: Option<&mut [f64]>) -> LossBreakdown {
    let l = &params.layout;
    let p = &params.weights;
    let nc = l.continuous;

    ws.enc.resize_with(l.encoder.len() + 1, Vec::new);
    ws.enc[0].clear();
    ws.enc[0].extend_from_slice(x);
    for (i, d) in l.encoder.iter().enumerate() {
        let (prev, next) = ws.enc.split_at_mut(i + 1);
        d.forward(p, &prev[i], &mut next[0]);
        tanh_in_place(&mut next[0]);
    }
    let h = ws.enc.last().expect("input layer");
    l.mean_head.forward(p, h, &mut ws.mean);
    l.logvar_head.forward(p, h, &mut ws.logvar);
    ws.z.clear();
    ws.z.extend(
        ws.mean
            .iter()
            .zip(&ws.logvar)
            .zip(noise)
            .map(|((m, lv), e)| m + libm::exp(0.5 * lv) * e),
    );

    ws.dec.resize_with(l.decoder.len() + 1, Vec::new);
    ws.dec[0].clear();
    ws.dec[0].extend_from_slice(&ws.z);
    for (i, d) in l.decoder.iter().enumerate() {
        let (prev, next) = ws.dec.split_at_mut(i + 1);
        d.forward(p, &prev[i], &mut next[0]);
        tanh_in_place(&mut next[0]);
    }
    l.output.forward(p, ws.dec.last().expect("latent layer"), &mut ws.out);

    let mut loss = LossBreakdown::default();
    for (o, t) in ws.out[..nc].iter().zip(&x[..nc]) {
        loss.reconstruction += (o - t) * (o - t);
    }
    for (m, lv) in ws.mean.iter().zip(&ws.logvar) {
        // ½(μ² + e^lv − 1 − lv), written to stay non-negative in floating point
        loss.kl += 0.5 * (m * m + (libm::expm1(*lv) - lv).max(0.0));
    }
    for (o, t) in ws.out[nc..].iter().zip(&x[nc..]) {
        let prob = sigmoid(*o).clamp(PROB_CLIP, 1.0 - PROB_CLIP);
        loss.bce -= t * libm::log(prob) + (1.0 - t) * libm::log(1.0 - prob);
    }
    loss.total = loss.reconstruction + loss.kl + loss.bce;

    let Some(grad) = grad else {
        return loss;
    };

    // d loss / d output pre-activation
    ws.d_a.clear();
    ws.d_a.extend(ws.out[..nc].iter().zip(&x[..nc]).map(|(o, t)| 2.0 * (o - t)));
    ws.d_a.extend(ws.out[nc..].iter().zip(&x[nc..]).map(|(o, t)| {
        let s = sigmoid(*o);
        if (PROB_CLIP..=1.0 - PROB_CLIP).contains(&s) {
            s - t
        } else {
            0.0
        }
    }));
    l.output
        .backward(p, grad, ws.dec.last().expect("latent layer"), &ws.d_a, Some(&mut ws.d_b));
    for (i, d) in l.decoder.iter().enumerate().rev() {
        for (g, a) in ws.d_b.iter_mut().zip(&ws.dec[i + 1]) {
            *g *= 1.0 - a * a;
        }
        d.backward(p, grad, &ws.dec[i], &ws.d_b, Some(&mut ws.tmp));
        core::mem::swap(&mut ws.d_b, &mut ws.tmp);
    }
    // ws.d_b now holds d loss / d z
    ws.d_mean.clear();
    ws.d_logvar.clear();
    for j in 0..l.latent {
        let sd = libm::exp(0.5 * ws.logvar[j]);
        ws.d_mean.push(ws.d_b[j] + ws.mean[j]);
        ws.d_logvar.push(ws.d_b[j] * 0.5 * sd * noise[j] + 0.5 * (sd * sd - 1.0));
    }
    let h = ws.enc.last().expect("input layer");
    l.mean_head.backward(p, grad, h, &ws.d_mean, Some(&mut ws.d_a));
    l.logvar_head.backward(p, grad, h, &ws.d_logvar, Some(&mut ws.tmp));
    for (a, b) in ws.d_a.iter_mut().zip(&ws.tmp) {
        *a += b;
    }
    for (i, d) in l.encoder.iter().enumerate().rev() {
        for (g, a) in ws.d_a.iter_mut().zip(&ws.enc[i + 1]) {
            *g *= 1.0 - a * a;
        }
        let dx = if i > 0 { Some(&mut ws.tmp) } else { None };
        d.backward(p, grad, &ws.enc[i], &ws.d_a, dx);
        if i > 0 {
            core::mem::swap(&mut ws.d_a, &mut ws.tmp);
        }
    }
    loss
}

fn check_layout(params: &VaeParams, f: &NodeFeatures) -> Result<()> {
    if f.layout != params.feature_layout || f.values.len() != params.layout.input_len() {
        bail!(
            Validation,
            "feature layout {:?} does not match model layout {:?}",
            f.layout,
            params.feature_layout
        );
    }
    Ok(())
}

/// Summed loss and gradient over `rows` (standardized inputs) with one noise row each.
fn batch_sums(params: &VaeParams, rows: &[&[f64]], noise: &[f64], with_grad: bool) -> (LossBreakdown, Vec<f64>) {
    let d = params.layout.latent;
    let mut ws = Workspace::default();
    let mut grad = if with_grad { vec![0.0; params.weights.len()] } else { Vec::new() };
    let mut sum = LossBreakdown::default();
    for (i, x) in rows.iter().enumerate() {
        let g = if with_grad { Some(grad.as_mut_slice()) } else { None };
        sum.add(&example(params, x, &noise[i * d..(i + 1) * d], &mut ws, g));
    }
    (sum, grad)
}

fn standardized(params: &VaeParams, batch: &[NodeFeatures]) -> Result<Vec<Vec<f64>>> {
    batch
        .iter()
        .map(|f| {
            check_layout(params, f)?;
            let mut v = Vec::with_capacity(f.values.len());
            params.input(&f.values, &mut v);
            Ok(v)
        })
        .collect()
}

fn check_batch(params: &VaeParams, batch: &[NodeFeatures], noise: &[f64]) -> Result<()> {
    if batch.is_empty() {
        bail!(Validation, "empty batch");
    }
    if noise.len() != batch.len() * params.layout.latent {
        bail!(
            Validation,
            "need {} noise draws, got {}",
            batch.len() * params.layout.latent,
            noise.len()
        );
    }
    Ok(())
}

/// Mean objective over `batch`; `noise` holds `batch.len() × latent` standard-normal draws.
pub fn vae_loss(params: &VaeParams, batch: &[NodeFeatures], noise: &[f64]) -> Result<LossBreakdown> {
    check_batch(params, batch, noise)?;
    let rows = standardized(params, batch)?;
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let (mut sum, _) = batch_sums(params, &refs, noise, false);
    sum.scale(1.0 / batch.len() as f64);
    sum.check()?;
    Ok(sum)
}

/// Mean objective and its gradient with respect to `params.weights`.
pub fn vae_loss_and_gradient(params: &VaeParams, batch: &[NodeFeatures], noise: &[f64]) -> Result<(LossBreakdown, Vec<f64>)> {
    check_batch(params, batch, noise)?;
    let rows = standardized(params, batch)?;
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    let (mut sum, mut grad) = batch_sums(params, &refs, noise, true);
    let inv = 1.0 / batch.len() as f64;
    sum.scale(inv);
    grad.iter_mut().for_each(|g| *g *= inv);
    sum.check()?;
    Ok((sum, grad))
}

/// Result of one gradient shard: summed loss and summed gradient.
pub struct ShardOutput {
    pub loss: LossBreakdown,
    pub grad: Vec<f64>,
}

/// Runs independent shard jobs. Results must come back in shard order.
pub trait ShardExecutor: Sync {
    fn run(&self, shards: usize, job: &(dyn Fn(usize) -> ShardOutput + Sync)) -> Vec<ShardOutput>;
}

/// Runs shards one after another on the calling thread.
pub struct Serial;

impl ShardExecutor for Serial {
    fn run(&self, shards: usize, job: &(dyn Fn(usize) -> ShardOutput + Sync)) -> Vec<ShardOutput> {
        (0..shards).map(job).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VaeTrainConfig {
    pub latent_dim: usize,
    pub architecture: Architecture,
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    pub holdout_fraction: f64,
    /// Gradient shards per batch; results depend on this, not on the executor.
    pub shards: usize,
    pub seed: u64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self {
            latent_dim: 10,
            architecture: Architecture::default(),
            learning_rate: 1e-3,
            momentum: 0.9,
            batch_size: 256,
            epochs: 200,
            patience: 20,
            holdout_fraction: 0.1,
            shards: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean of the minibatch objectives seen during the epoch.
    pub train: LossBreakdown,
    pub validation: Option<LossBreakdown>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub train_examples: usize,
    pub holdout_examples: usize,
}

fn normal_draws(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Trains one network on the pooled features of every index and node.
pub fn train_vae(features: &[NodeFeatures], config: &VaeTrainConfig, executor: &dyn ShardExecutor) -> Result<(VaeParams, TrainReport)> {
    let Some(first) = features.first() else {
        bail!(Validation, "empty VAE training set");
    };
    if config.batch_size == 0 || config.shards == 0 || config.latent_dim == 0 {
        bail!(Validation, "batch size, shards and latent dimension must be positive");
    }
    if !(0.0..1.0).contains(&config.holdout_fraction) {
        bail!(Validation, "holdout fraction must lie in [0, 1)");
    }
    let mut params = VaeParams::init(first.layout, config.latent_dim, config.architecture.clone(), config.seed)?;
    for f in features {
        check_layout(&params, f)?;
        if let Some(v) = f.values.iter().find(|v| !v.is_finite()) {
            bail!(
                Validation,
                "non-finite feature value {v} (index {}, node {}, month {})",
                f.index,
                f.node,
                f.month
            );
        }
    }
    let nc = params.layout.continuous;
    params.standardizer = Standardizer::fit(features.iter().map(|f| &f.values[..nc]), nc);
    let inputs: Vec<Vec<f64>> = features
        .iter()
        .map(|f| {
            let mut v = Vec::with_capacity(f.values.len());
            params.input(&f.values, &mut v);
            v
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x005e_ed0f_7a11);
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    order.shuffle(&mut rng);
    let holdout_len = if inputs.len() >= 2 {
        ((inputs.len() as f64 * config.holdout_fraction) as usize).min(inputs.len() - 1)
    } else {
        0
    };
    let (train_idx, holdout_idx) = order.split_at(inputs.len() - holdout_len);
    let mut train_idx = train_idx.to_vec();
    let d = config.latent_dim;
    let holdout_rows: Vec<&[f64]> = holdout_idx.iter().map(|&i| inputs[i].as_slice()).collect();
    let holdout_noise = normal_draws(&mut rng, holdout_rows.len() * d);

    let mut velocity = vec![0.0; params.weights.len()];
    let mut best = (f64::INFINITY, params.weights.clone(), 0usize);
    let mut epochs = Vec::new();
    let mut stopped_early = false;
    for epoch in 0..config.epochs {
        train_idx.shuffle(&mut rng);
        let mut epoch_loss = LossBreakdown::default();
        let mut batches = 0usize;
        for batch in train_idx.chunks(config.batch_size) {
            let rows: Vec<&[f64]> = batch.iter().map(|&i| inputs[i].as_slice()).collect();
            let noise = normal_draws(&mut rng, rows.len() * d);
            let shards = config.shards.min(rows.len());
            let per = rows.len().div_ceil(shards);
            let snapshot = &params;
            let job = |s: usize| {
                let lo = (s * per).min(rows.len());
                let hi = ((s + 1) * per).min(rows.len());
                let (loss, grad) = batch_sums(snapshot, &rows[lo..hi], &noise[lo * d..hi * d], true);
                ShardOutput { loss, grad }
            };
            let outputs = executor.run(shards, &job);
            let mut loss = LossBreakdown::default();
            let mut grad = vec![0.0; params.weights.len()];
            for o in &outputs {
                loss.add(&o.loss);
                for (g, x) in grad.iter_mut().zip(&o.grad) {
                    *g += x;
                }
            }
            let inv = 1.0 / rows.len() as f64;
            loss.scale(inv);
            if !loss.total.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Training {
                    epoch,
                    message: format!("non-finite loss {:?}", loss),
                });
            }
            for ((w, v), g) in params.weights.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = config.momentum * *v - config.learning_rate * g * inv;
                *w += *v;
            }
            epoch_loss.add(&loss);
            batches += 1;
        }
        epoch_loss.scale(1.0 / batches.max(1) as f64);
        let validation = if holdout_rows.is_empty() {
            None
        } else {
            let (mut v, _) = batch_sums(&params, &holdout_rows, &holdout_noise, false);
            v.scale(1.0 / holdout_rows.len() as f64);
            if !v.total.is_finite() {
                return Err(Error::Training {
                    epoch,
                    message: "non-finite validation loss".into(),
                });
            }
            Some(v)
        };
        epochs.push(EpochLog {
            epoch,
            train: epoch_loss,
            validation,
        });
        let monitored = validation.map_or(epoch_loss.total, |v| v.total);
        if monitored < best.0 {
            best = (monitored, params.weights.clone(), epoch);
        } else if epoch - best.2 >= config.patience {
            stopped_early = true;
            break;
        }
    }
    params.weights = best.1;
    let report = TrainReport {
        epochs,
        best_epoch: best.2,
        stopped_early,
        train_examples: train_idx.len(),
        holdout_examples: holdout_rows.len(),
    };
    Ok((params, report))
}

/// Latent summary of one node feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeEmbedding {
    pub month: YearMonth,
    pub index: usize,
    pub node: usize,
    pub values: Vec<f64>,
}

/// Encoder mean for `f`.
pub fn embed(params: &VaeParams, f: &NodeFeatures) -> Result<NodeEmbedding> {
    check_layout(params, f)?;
    let l = &params.layout;
    let p = &params.weights;
    let mut x = Vec::with_capacity(l.input_len());
    params.input(&f.values, &mut x);
    let mut next = Vec::new();
    for d in &l.encoder {
        d.forward(p, &x, &mut next);
        tanh_in_place(&mut next);
        core::mem::swap(&mut x, &mut next);
    }
    let mut mean = Vec::with_capacity(l.latent);
    l.mean_head.forward(p, &x, &mut mean);
    if mean.iter().any(|v| !v.is_finite()) {
        bail!(
            Numeric,
            "non-finite embedding for index {} node {} month {}",
            f.index,
            f.node,
            f.month
        );
    }
    Ok(NodeEmbedding {
        month: f.month,
        index: f.index,
        node: f.node,
        values: mean,
    })
}
