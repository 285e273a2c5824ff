use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{hinge, mine_triplets, Embedding, MiningMode, Triplet, TripletLossParams};
use crate::error::{Error, Result};

/// Added to the squared norm before the square root in normalization.
pub const NORM_EPSILON: f64 = 1e-12;

/// One training/evaluation observation for the toy encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub identity: u32,
    pub source: u64,
    pub masked: bool,
}

/// A single affine layer followed by L2 normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoder {
    input_dim: usize,
    embed_dim: usize,
    /// Row-major `input_dim x embed_dim`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

/// Gradient with the same layout as [`ToyEncoder`]'s parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl EncoderGrad {
    pub fn norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(&self.bias)
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

struct Forward {
    z: Vec<f64>,
    norm: f64,
    e: Vec<f64>,
}

impl ToyEncoder {
    pub fn new(input_dim: usize, embed_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if input_dim == 0 || embed_dim == 0 {
            return Err(Error::Validation("encoder dimensions must be positive".into()));
        }
        if weights.len() != input_dim * embed_dim || bias.len() != embed_dim {
            return Err(Error::Validation(format!(
                "encoder expects {} weights and {embed_dim} biases, got {} and {}",
                input_dim * embed_dim,
                weights.len(),
                bias.len()
            )));
        }
        Ok(ToyEncoder {
            input_dim,
            embed_dim,
            weights,
            bias,
        })
    }

    /// Weights drawn from N(0, 1/input_dim), zero bias.
    pub fn random(input_dim: usize, embed_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (input_dim as f64).sqrt()).expect("finite std");
        let weights = (0..input_dim * embed_dim).map(|_| normal.sample(&mut rng)).collect();
        ToyEncoder {
            input_dim,
            embed_dim,
            weights,
            bias: vec![0.0; embed_dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut weights = vec![0.0; dim * dim];
        for i in 0..dim {
            weights[i * dim + i] = 1.0;
        }
        ToyEncoder {
            input_dim: dim,
            embed_dim: dim,
            weights,
            bias: vec![0.0; dim],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [f64] {
        &mut self.bias
    }

    fn forward(&self, x: &[f64]) -> Result<Forward> {
        if x.len() != self.input_dim {
            return Err(Error::Argument(format!(
                "encoder input has {} dims, expected {}",
                x.len(),
                self.input_dim
            )));
        }
        let mut z = self.bias.clone();
        for (i, xi) in x.iter().enumerate() {
            let row = &self.weights[i * self.embed_dim..(i + 1) * self.embed_dim];
            for (zj, w) in z.iter_mut().zip(row) {
                *zj += xi * w;
            }
        }
        let norm = (z.iter().map(|v| v * v).sum::<f64>() + NORM_EPSILON).sqrt();
        let e = z.iter().map(|v| v / norm).collect();
        Ok(Forward { z, norm, e })
    }

    pub fn embed(&self, s: &Sample) -> Result<Embedding> {
        let f = self.forward(&s.input)?;
        Ok(Embedding::from_encoder(f.e, s.identity, s.source, s.masked))
    }

    pub fn embed_all(&self, samples: &[Sample]) -> Result<Vec<Embedding>> {
        samples.iter().map(|s| self.embed(s)).collect()
    }

    fn step(&mut self, g: &EncoderGrad, lr: f64) {
        for (w, d) in self.weights.iter_mut().zip(&g.weights) {
            *w -= lr * d;
        }
        for (b, d) in self.bias.iter_mut().zip(&g.bias) {
            *b -= lr * d;
        }
    }
}

/// Normalized affine map of one input vector.
pub fn encode(enc: &ToyEncoder, x: &[f64]) -> Result<Vec<f64>> {
    Ok(enc.forward(x)?.e)
}

/// Mean hinge loss over the given triplets (0 for an empty list).
pub fn mean_triplet_loss(
    enc: &ToyEncoder,
    batch: &[Sample],
    triplets: &[Triplet],
    params: &TripletLossParams,
) -> Result<f64> {
    if triplets.is_empty() {
        return Ok(0.0);
    }
    let emb = batch
        .iter()
        .map(|s| Ok(enc.forward(&s.input)?.e))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = triplets
        .iter()
        .map(|t| {
            let d_ap = super::sq_l2(&emb[t.anchor], &emb[t.positive])?;
            let d_an = super::sq_l2(&emb[t.anchor], &emb[t.negative])?;
            Ok(hinge(d_ap, d_an, params))
        })
        .sum::<Result<f64>>()?;
    Ok(total / triplets.len() as f64)
}

/// Exact gradient of [`mean_triplet_loss`] for a fixed triplet list.
/// Inactive hinges (argument <= 0) contribute nothing.
pub fn triplet_gradient(
    enc: &ToyEncoder,
    batch: &[Sample],
    triplets: &[Triplet],
    params: &TripletLossParams,
) -> Result<(f64, EncoderGrad)> {
    let mut grad = EncoderGrad {
        weights: vec![0.0; enc.weights.len()],
        bias: vec![0.0; enc.bias.len()],
    };
    if triplets.is_empty() {
        return Ok((0.0, grad));
    }
    let fwd = batch
        .iter()
        .map(|s| enc.forward(&s.input))
        .collect::<Result<Vec<_>>>()?;
    let dim = enc.embed_dim;
    let scale = 1.0 / triplets.len() as f64;
    let mut g_e = vec![vec![0.0; dim]; batch.len()];
    let mut total = 0.0;
    for t in triplets {
        let (a, p, n) = (&fwd[t.anchor].e, &fwd[t.positive].e, &fwd[t.negative].e);
        let d_ap = super::sq_l2(a, p)?;
        let d_an = super::sq_l2(a, n)?;
        let arg = d_ap - d_an + params.alpha();
        if arg <= 0.0 {
            continue;
        }
        total += arg;
        for k in 0..dim {
            g_e[t.anchor][k] += scale * 2.0 * (n[k] - p[k]);
            g_e[t.positive][k] += scale * -2.0 * (a[k] - p[k]);
            g_e[t.negative][k] += scale * 2.0 * (a[k] - n[k]);
        }
    }
    for ((s, f), ge) in batch.iter().zip(&fwd).zip(&g_e) {
        if ge.iter().all(|v| *v == 0.0) {
            continue;
        }
        // d e / d z = I / n - z z^T / n^3
        let zg: f64 = f.z.iter().zip(ge).map(|(z, g)| z * g).sum();
        let n3 = f.norm * f.norm * f.norm;
        let g_z: Vec<f64> = f
            .z
            .iter()
            .zip(ge)
            .map(|(z, g)| g / f.norm - z * zg / n3)
            .collect();
        for (i, xi) in s.input.iter().enumerate() {
            let row = &mut grad.weights[i * dim..(i + 1) * dim];
            for (w, gz) in row.iter_mut().zip(&g_z) {
                *w += xi * gz;
            }
        }
        for (b, gz) in grad.bias.iter_mut().zip(&g_z) {
            *b += gz;
        }
    }
    Ok((total * scale, grad))
}

/// Mine triplets on the current embeddings, then differentiate the mean
/// loss over them. Returns (mean loss, gradient, triplet count).
pub fn loss_gradient(
    enc: &ToyEncoder,
    batch: &[Sample],
    params: &TripletLossParams,
    mode: MiningMode,
) -> Result<(f64, EncoderGrad, usize)> {
    let emb = enc.embed_all(batch)?;
    let triplets = mine_triplets(&emb, mode)?;
    let (loss, grad) = triplet_gradient(enc, batch, &triplets, params)?;
    Ok((loss, grad, triplets.len()))
}

/// Three equal learning-rate steps; the remainder epochs join the last.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepSchedule {
    pub rates: [f64; 3],
}

impl Default for StepSchedule {
    fn default() -> Self {
        StepSchedule {
            rates: [0.05, 0.005, 0.0005],
        }
    }
}

impl StepSchedule {
    /// Rate for 1-based `epoch` of `total`.
    pub fn rate(&self, epoch: usize, total: usize) -> f64 {
        let span = total / 3;
        let step = if span == 0 {
            2
        } else {
            ((epoch.saturating_sub(1)) / span).min(2)
        };
        self.rates[step]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub identities_per_batch: usize,
    pub samples_per_identity: usize,
    pub mode: MiningMode,
    pub params: TripletLossParams,
    pub schedule: StepSchedule,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            identities_per_batch: 8,
            samples_per_identity: 4,
            mode: MiningMode::SemiHard,
            params: TripletLossParams::default(),
            schedule: StepSchedule::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean over batches of the batch's mean mined loss, before the update.
    pub mean_loss: f64,
    pub triplets: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub encoder: ToyEncoder,
    pub trace: Vec<EpochStats>,
}

/// Plain SGD over identity-balanced batches: each epoch shuffles the
/// identities, groups them `identities_per_batch` at a time and takes
/// `samples_per_identity` shuffled samples of each.
pub fn train_toy(mut enc: ToyEncoder, data: &[Sample], cfg: &TrainConfig) -> Result<TrainReport> {
    let mut by_id: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, s) in data.iter().enumerate() {
        by_id.entry(s.identity).or_default().push(i);
    }
    if by_id.len() < 2 {
        return Err(Error::Validation(format!(
            "training needs at least 2 identities, got {}",
            by_id.len()
        )));
    }
    if cfg.identities_per_batch < 2 || cfg.samples_per_identity < 2 {
        return Err(Error::Validation(
            "batches need at least 2 identities with 2 samples each".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let ids: Vec<u32> = by_id.keys().copied().collect();
    let mut trace = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let lr = cfg.schedule.rate(epoch, cfg.epochs);
        let mut order = ids.clone();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        let mut triplets = 0usize;
        for group in order.chunks(cfg.identities_per_batch) {
            if group.len() < 2 {
                continue;
            }
            let mut batch = Vec::new();
            for id in group {
                let mut members = by_id[id].clone();
                members.shuffle(&mut rng);
                batch.extend(
                    members
                        .iter()
                        .take(cfg.samples_per_identity)
                        .map(|&i| data[i].clone()),
                );
            }
            let (loss, grad, n) = loss_gradient(&enc, &batch, &cfg.params, cfg.mode)?;
            enc.step(&grad, lr);
            loss_sum += loss;
            batches += 1;
            triplets += n;
        }
        trace.push(EpochStats {
            epoch,
            learning_rate: lr,
            mean_loss: if batches > 0 { loss_sum / batches as f64 } else { 0.0 },
            triplets,
        });
    }
    Ok(TrainReport {
        encoder: enc,
        trace,
    })
}
