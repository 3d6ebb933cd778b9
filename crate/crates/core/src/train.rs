//! Training loops: contrastive pretraining of both encoders and supervised
//! classifiers on top of a single encoder.
//!
//! Every sample gets its own small graph. The loss is recorded on a separate
//! graph whose leaves are the batch embeddings; its gradient with respect to
//! each embedding row seeds the backward pass of that sample's encoder graph.
//! Per-sample parameter gradients are then summed.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::contrastive::contrastive_loss_graph;
use crate::data::{EpochSampler, LabeledPair, Splits};
use crate::encoders::{prepare_motion, prepare_video, Embedding, Encoder, Modality};
use crate::error::{Error, Result};
use crate::eval::{argmax, eval_correspondence};
use crate::numerics::{
    collect_grads, he_uniform, FreezeMask, GradMap, Graph, OptimizerConfig, OptimizerState, ParamStore, Tensor, Var,
};
use crate::signal::{fit_normalizer, normalize_spectrogram, stft_log_magnitude, ChannelStats, Spectrogram};

pub const NORM_MEAN: &str = "norm.motion.mean";
pub const NORM_STD: &str = "norm.motion.std";

/// Encoder inputs for every pair of a dataset, in dataset order.
#[derive(Debug, Clone)]
pub struct PreparedSet {
    pub videos: Vec<Tensor>,
    pub motions: Vec<Tensor>,
    pub labels: Vec<usize>,
}

impl PreparedSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self, modality: Modality) -> &[Tensor] {
        match modality {
            Modality::Video => &self.videos,
            Modality::Motion => &self.motions,
        }
    }
}

pub fn spectrograms(pairs: &[LabeledPair], n_fft: usize, hop: usize) -> Result<Vec<Spectrogram>> {
    pairs
        .par_iter()
        .map(|p| stft_log_magnitude(&p.motion, n_fft, hop))
        .collect()
}

/// Per-channel statistics of the spectrograms at `indices`, rounded to `f32`
/// so that statistics reloaded from a checkpoint are identical.
pub fn fit_motion_stats(specs: &[Spectrogram], indices: &[usize]) -> Result<ChannelStats> {
    let chosen: Vec<Spectrogram> = indices.iter().map(|&i| specs[i].clone()).collect();
    let mut stats = fit_normalizer(&chosen)?;
    for v in stats.mean.iter_mut().chain(stats.std.iter_mut()) {
        *v = *v as f32 as f64;
    }
    Ok(stats)
}

pub fn prepare(pairs: &[LabeledPair], specs: &[Spectrogram], stats: &ChannelStats) -> Result<PreparedSet> {
    let motions = specs
        .par_iter()
        .map(|s| Ok(prepare_motion(&normalize_spectrogram(s, stats)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(PreparedSet {
        videos: pairs.par_iter().map(|p| prepare_video(&p.video)).collect(),
        motions,
        labels: pairs.iter().map(|p| p.action_label).collect(),
    })
}

pub fn stats_params(stats: &ChannelStats) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    store.insert(NORM_MEAN, Tensor::from_vec(stats.mean.clone()))?;
    store.insert(NORM_STD, Tensor::from_vec(stats.std.clone()))?;
    Ok(store)
}

pub fn stats_from_params(store: &ParamStore) -> Result<ChannelStats> {
    let get = |name: &str| {
        store
            .value(name)
            .map(|t| t.data().to_vec())
            .ok_or_else(|| Error::NoSuchParameterGroup(name.into()))
    };
    Ok(ChannelStats {
        mean: get(NORM_MEAN)?,
        std: get(NORM_STD)?,
    })
}

/// Embeddings of `inputs[i]` for every `i` in `indices`.
pub fn embed_indices(encoder: &Encoder, params: &ParamStore, inputs: &[Tensor], indices: &[usize]) -> Result<Vec<Embedding>> {
    indices
        .par_iter()
        .map(|&i| encoder.embed(params, &inputs[i]))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub temperature: f64,
    pub optimizer: OptimizerConfig,
    pub freeze: Vec<String>,
    pub seed: u64,
    /// Sum per-sample gradients in a fixed order instead of rayon's reduction tree.
    pub deterministic: bool,
}

fn reduce_grads(parts: Vec<GradMap>, deterministic: bool) -> GradMap {
    let add = |mut a: GradMap, b: GradMap| {
        for (name, g) in b {
            match a.get_mut(&name) {
                Some(acc) => acc.add_assign(&g),
                None => {
                    a.insert(name, g);
                }
            }
        }
        a
    };
    if deterministic {
        parts.into_iter().fold(GradMap::new(), add)
    } else {
        parts.into_par_iter().reduce(GradMap::new, add)
    }
}

fn forward_all(encoder: &Encoder, params: &ParamStore, inputs: &[Tensor], batch: &[usize]) -> Result<Vec<(Graph, Var)>> {
    batch
        .par_iter()
        .map(|&i| {
            let mut g = Graph::new();
            let out = encoder.forward(&mut g, params, &inputs[i])?;
            Ok((g, out))
        })
        .collect()
}

fn stack_outputs(graphs: &[(Graph, Var)]) -> Result<Tensor> {
    let d = graphs[0].0.shape(graphs[0].1)[0];
    let data: Vec<f64> = graphs.iter().flat_map(|(g, v)| g.value(*v).data().iter().copied()).collect();
    Tensor::new(vec![graphs.len(), d], data)
}

fn backprop_rows(graphs: &[(Graph, Var)], seed: &Tensor) -> Result<Vec<GradMap>> {
    let d = seed.shape()[1];
    graphs
        .par_iter()
        .enumerate()
        .map(|(i, (g, out))| {
            let row = Tensor::from_vec(seed.data()[i * d..(i + 1) * d].to_vec());
            let grads = g.backward_with_seed(*out, row)?;
            Ok(collect_grads(g, &grads))
        })
        .collect()
}

/// Whether some parameter of `encoder` is left trainable by `mask`.
fn trainable(encoder: &Encoder, params: &ParamStore, mask: &FreezeMask) -> bool {
    params.with_prefix(&encoder.prefix()).any(|n| !mask.is_frozen(n))
}

/// Contrastive loss of one batch and, when requested, the summed parameter gradients.
fn contrastive_step(
    video: &Encoder,
    motion: &Encoder,
    params: &ParamStore,
    data: &PreparedSet,
    batch: &[usize],
    temperature: f64,
    backprop: (bool, bool),
    deterministic: bool,
) -> Result<(f64, GradMap)> {
    let vg = forward_all(video, params, &data.videos, batch)?;
    let mg = forward_all(motion, params, &data.motions, batch)?;
    let mut g = Graph::new();
    let v = g.input(stack_outputs(&vg)?);
    let m = g.input(stack_outputs(&mg)?);
    let loss = contrastive_loss_graph(&mut g, v, m, temperature)?;
    let value = g.value(loss).item();
    if !value.is_finite() {
        return Err(Error::NumericalOverflow(format!("contrastive loss {value}")));
    }
    let mut parts = Vec::new();
    if backprop.0 || backprop.1 {
        let grads = g.backward(loss)?;
        if backprop.0 {
            parts.extend(backprop_rows(&vg, grads.get(v).expect("leaf gradient"))?);
        }
        if backprop.1 {
            parts.extend(backprop_rows(&mg, grads.get(m).expect("leaf gradient"))?);
        }
    }
    Ok((value, reduce_grads(parts, deterministic)))
}

/// Loss of one training batch and parameter gradients of both encoders,
/// computed the way `pretrain` does (per-sample graphs seeded by the loss).
pub fn batch_gradients(
    video: &Encoder,
    motion: &Encoder,
    params: &ParamStore,
    data: &PreparedSet,
    batch: &[usize],
    temperature: f64,
    deterministic: bool,
) -> Result<(f64, GradMap)> {
    contrastive_step(video, motion, params, data, batch, temperature, (true, true), deterministic)
}

/// Fixed evaluation batches: consecutive chunks of `n`, or one batch when
/// the pool is smaller than `n`.
fn fixed_batches(pool: &[usize], n: usize) -> Vec<&[usize]> {
    if pool.len() < n {
        vec![pool]
    } else {
        pool.chunks_exact(n).collect()
    }
}

pub fn contrastive_loss_on(
    video: &Encoder,
    motion: &Encoder,
    params: &ParamStore,
    data: &PreparedSet,
    pool: &[usize],
    batch_size: usize,
    temperature: f64,
) -> Result<f64> {
    if pool.len() < 2 {
        return Err(Error::NoData);
    }
    let batches = fixed_batches(pool, batch_size);
    let mut total = 0.0;
    for b in &batches {
        total += contrastive_step(video, motion, params, data, b, temperature, (false, false), true)?.0;
    }
    Ok(total / batches.len() as f64)
}

pub fn correspondence_auc(
    video: &Encoder,
    motion: &Encoder,
    params: &ParamStore,
    data: &PreparedSet,
    pool: &[usize],
    batch_size: usize,
) -> Result<f64> {
    let v = embed_indices(video, params, &data.videos, pool)?;
    let m = embed_indices(motion, params, &data.motions, pool)?;
    eval_correspondence(&v, &m, batch_size)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainReport {
    /// Validation loss after each epoch.
    pub loss_curve: Vec<f64>,
    /// Mean training-batch loss of each epoch.
    pub train_loss_curve: Vec<f64>,
    pub test_auc: f64,
}

fn check_batch(cfg: &TrainConfig, min: usize) -> Result<()> {
    if cfg.batch_size < min {
        return Err(Error::Config(format!("batch size must be at least {min}, got {}", cfg.batch_size)));
    }
    Ok(())
}

/// Trains both encoders on the train split. `on_epoch` sees the parameters
/// after every epoch (used for checkpointing). Parameters are rounded to `f32`
/// once training ends, before the final test-split AUC.
pub fn pretrain(
    video: &Encoder,
    motion: &Encoder,
    params: &mut ParamStore,
    data: &PreparedSet,
    splits: &Splits,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &ParamStore) -> Result<()>,
) -> Result<PretrainReport> {
    check_batch(cfg, 2)?;
    let mask = FreezeMask::new(params, &cfg.freeze)?;
    let backprop = (trainable(video, params, &mask), trainable(motion, params, &mask));
    let mut opt = OptimizerState::new(cfg.optimizer, params)?;
    let mut sampler = EpochSampler::new(splits.train.clone(), cfg.batch_size, cfg.seed)?;
    let mut report = PretrainReport {
        loss_curve: Vec::new(),
        train_loss_curve: Vec::new(),
        test_auc: f64::NAN,
    };
    for epoch in 1..=cfg.epochs {
        let batches = sampler.next_epoch();
        let mut total = 0.0;
        for b in &batches {
            let (loss, grads) = contrastive_step(
                video,
                motion,
                params,
                data,
                &b.indices,
                cfg.temperature,
                backprop,
                cfg.deterministic,
            )?;
            total += loss;
            params.zero_grads();
            params.accumulate_map(&grads)?;
            opt.step(params, &mask)?;
        }
        report.train_loss_curve.push(total / batches.len() as f64);
        let val = contrastive_loss_on(video, motion, params, data, &splits.validation, cfg.batch_size, cfg.temperature)?;
        report.loss_curve.push(val);
        on_epoch(epoch, params)?;
    }
    params.round_to_f32();
    report.test_auc = correspondence_auc(video, motion, params, data, &splits.test, cfg.batch_size)?;
    Ok(report)
}

pub fn head_prefix(modality: Modality) -> String {
    format!("head.{}.", modality.name())
}

/// Adds a linear classification head `[d, K]` for `encoder` to `params`.
pub fn init_head(encoder: &Encoder, num_classes: usize, seed: u64, params: &mut ParamStore) -> Result<()> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let p = head_prefix(encoder.modality());
    let d = encoder.embed_dim();
    params.insert(format!("{p}weight"), he_uniform(&[d, num_classes], d, &mut rng))?;
    params.insert(format!("{p}bias"), Tensor::zeros(&[num_classes]))
}

fn classifier_loss(encoder: &Encoder, params: &ParamStore, input: &Tensor, label: usize, weight: f64) -> Result<(Graph, Var)> {
    let mut g = Graph::new();
    let emb = encoder.forward(&mut g, params, input)?;
    let p = head_prefix(encoder.modality());
    let w = g.param(params, &format!("{p}weight"))?;
    let b = g.param(params, &format!("{p}bias"))?;
    let logits = g.affine(emb, w, b)?;
    let k = g.shape(logits)[0];
    let row = g.reshape(logits, &[1, k])?;
    let ce = g.softmax_cross_entropy(row, &[label])?;
    let out = g.scale(ce, weight);
    Ok((g, out))
}

/// Class probabilities of the encoder plus head for every index of `pool`.
pub fn classifier_probs(encoder: &Encoder, params: &ParamStore, data: &PreparedSet, pool: &[usize]) -> Result<Vec<Vec<f64>>> {
    let p = head_prefix(encoder.modality());
    let w = params
        .value(&format!("{p}weight"))
        .ok_or_else(|| Error::NoSuchParameterGroup(format!("{p}weight")))?;
    let b = params
        .value(&format!("{p}bias"))
        .ok_or_else(|| Error::NoSuchParameterGroup(format!("{p}bias")))?;
    let k = b.len();
    let embs = embed_indices(encoder, params, data.inputs(encoder.modality()), pool)?;
    Ok(embs
        .iter()
        .map(|e| {
            let mut z = b.data().to_vec();
            for (i, x) in e.values().iter().enumerate() {
                for (zj, wj) in z.iter_mut().zip(&w.data()[i * k..(i + 1) * k]) {
                    *zj += x * wj;
                }
            }
            let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let total: f64 = z.iter().map(|v| (v - max).exp()).sum();
            z.iter().map(|v| (v - max).exp() / total).collect()
        })
        .collect())
}

pub fn predictions(probs: &[Vec<f64>]) -> Vec<usize> {
    probs.iter().map(|p| argmax(p)).collect()
}

fn mean_ce(encoder: &Encoder, params: &ParamStore, data: &PreparedSet, pool: &[usize]) -> Result<f64> {
    let probs = classifier_probs(encoder, params, data, pool)?;
    let total: f64 = probs
        .iter()
        .zip(pool)
        .map(|(p, &i)| -p[data.labels[i]].max(f64::MIN_POSITIVE).ln())
        .sum();
    Ok(total / pool.len() as f64)
}

/// End-to-end classifier training of `encoder` plus its head. Returns the
/// validation cross-entropy after each epoch.
pub fn train_classifier(
    encoder: &Encoder,
    params: &mut ParamStore,
    data: &PreparedSet,
    splits: &Splits,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(usize, &ParamStore) -> Result<()>,
) -> Result<Vec<f64>> {
    check_batch(cfg, 1)?;
    let mask = FreezeMask::new(params, &cfg.freeze)?;
    let mut opt = OptimizerState::new(cfg.optimizer, params)?;
    let mut sampler = EpochSampler::new(splits.train.clone(), cfg.batch_size, cfg.seed)?;
    let mut curve = Vec::new();
    for epoch in 1..=cfg.epochs {
        for b in sampler.next_epoch() {
            let weight = 1.0 / b.len() as f64;
            let parts = b
                .indices
                .par_iter()
                .map(|&i| {
                    let (g, out) = classifier_loss(encoder, params, &data.inputs(encoder.modality())[i], data.labels[i], weight)?;
                    let value = g.value(out).item();
                    if !value.is_finite() {
                        return Err(Error::NumericalOverflow(format!("classifier loss {value}")));
                    }
                    Ok(collect_grads(&g, &g.backward(out)?))
                })
                .collect::<Result<Vec<_>>>()?;
            params.zero_grads();
            params.accumulate_map(&reduce_grads(parts, cfg.deterministic))?;
            opt.step(params, &mask)?;
        }
        curve.push(mean_ce(encoder, params, data, &splits.validation)?);
        on_epoch(epoch, params)?;
    }
    params.round_to_f32();
    Ok(curve)
}
