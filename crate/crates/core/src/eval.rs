//! Correspondence ROC-AUC, linear probing, softmax ensembling and modality
//! attribution.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::contrastive::{correspondence_scores, similarity_matrix};
use crate::encoders::Embedding;
use crate::error::{Error, Result};

/// Scores of matched (positive) and mismatched (negative) pairs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScoreSet {
    pub positives: Vec<f64>,
    pub negatives: Vec<f64>,
}

impl ScoreSet {
    pub fn new(positives: Vec<f64>, negatives: Vec<f64>) -> Self {
        Self { positives, negatives }
    }

    pub fn extend(&mut self, other: ScoreSet) {
        self.positives.extend(other.positives);
        self.negatives.extend(other.negatives);
    }
}

/// Mann-Whitney AUC with ties credited one half.
///
/// Scores are sorted once and each positive is credited with the number of
/// negatives strictly below it plus half of those equal to it. The counts are
/// kept as integers, so the result equals direct pair counting bit for bit.
pub fn roc_auc(scores: &ScoreSet) -> Result<f64> {
    let (p, n) = (scores.positives.len(), scores.negatives.len());
    if p == 0 || n == 0 {
        return Err(Error::UndefinedAuc(format!("{p} positives and {n} negatives")));
    }
    if let Some(v) = scores.positives.iter().chain(&scores.negatives).find(|v| !v.is_finite()) {
        return Err(Error::UndefinedAuc(format!("non-finite score {v}")));
    }
    let mut neg = scores.negatives.clone();
    neg.sort_by(f64::total_cmp);
    // -0.0 and 0.0 compare equal as scores
    let below = |x: f64| neg.partition_point(|&v| v < x);
    let not_above = |x: f64| neg.partition_point(|&v| v <= x);
    let mut twice: u128 = 0;
    for &x in &scores.positives {
        let lo = below(x) as u128;
        let hi = not_above(x) as u128;
        twice += 2 * lo + (hi - lo);
    }
    Ok(twice as f64 / (2 * p as u128 * n as u128) as f64)
}

/// Pools diagonal and off-diagonal cosine scores over consecutive batches of
/// `batch_size` aligned pairs, then takes the AUC. A trailing short batch is
/// kept; a batch of one contributes a positive only.
pub fn correspondence_score_set(
    videos: &[Embedding],
    motions: &[Embedding],
    batch_size: usize,
) -> Result<ScoreSet> {
    if videos.len() != motions.len() {
        return Err(Error::Shape(format!(
            "{} video embeddings vs {} motion embeddings",
            videos.len(),
            motions.len()
        )));
    }
    if videos.len() < 2 {
        return Err(Error::UndefinedAuc(format!("need at least 2 pairs, got {}", videos.len())));
    }
    if batch_size == 0 {
        return Err(Error::Config("evaluation batch size must be positive".into()));
    }
    let mut set = ScoreSet::default();
    for (v, m) in videos.chunks(batch_size).zip(motions.chunks(batch_size)) {
        let s = similarity_matrix(v, m)?;
        let (pos, neg) = correspondence_scores(&s);
        set.extend(ScoreSet::new(pos, neg));
    }
    Ok(set)
}

pub fn eval_correspondence(videos: &[Embedding], motions: &[Embedding], batch_size: usize) -> Result<f64> {
    roc_auc(&correspondence_score_set(videos, motions, batch_size)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub l2: f64,
    pub epochs: usize,
    pub lr: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            epochs: 500,
            lr: 0.1,
        }
    }
}

/// Multiclass logistic regression over standardized embeddings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeModel {
    /// `[d, K]`, row-major.
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub dim: usize,
    pub num_classes: usize,
    /// Train-split feature statistics applied before the linear map.
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in z.iter_mut() {
        *v /= total;
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

impl ProbeModel {
    fn standardize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(self.feature_mean.iter().zip(&self.feature_std))
            .map(|(v, (m, s))| (v - m) / s)
            .collect()
    }

    fn logits(&self, z: &[f64]) -> Vec<f64> {
        let k = self.num_classes;
        let mut out = self.bias.clone();
        for (i, &zi) in z.iter().enumerate() {
            let row = &self.weight[i * k..(i + 1) * k];
            for (o, w) in out.iter_mut().zip(row) {
                *o += zi * w;
            }
        }
        out
    }

    pub fn predict_proba(&self, e: &Embedding) -> Result<Vec<f64>> {
        if e.dim() != self.dim {
            return Err(Error::ProbeMismatch {
                probe: self.dim,
                embedding: e.dim(),
            });
        }
        let mut p = self.logits(&self.standardize(e.values()));
        softmax_in_place(&mut p);
        Ok(p)
    }

    pub fn predict(&self, e: &Embedding) -> Result<usize> {
        Ok(argmax(&self.predict_proba(e)?))
    }
}

/// Fits a probe by full-batch gradient descent on mean softmax cross-entropy.
///
/// The L2 term is applied as a proximal shrink of the weights after each
/// gradient step, which stays stable for any penalty; biases are not
/// penalized, so a huge penalty leaves a model that predicts the class priors.
pub fn train_probe(data: &[(Embedding, usize)], config: &ProbeConfig) -> Result<ProbeModel> {
    let Some((first, _)) = data.first() else {
        return Err(Error::DegenerateProbe("no training examples".into()));
    };
    let d = first.dim();
    if let Some((e, _)) = data.iter().find(|(e, _)| e.dim() != d) {
        return Err(Error::ProbeMismatch { probe: d, embedding: e.dim() });
    }
    let k = data.iter().map(|(_, l)| l + 1).max().unwrap_or(0);
    let distinct = data.iter().map(|(_, l)| *l).collect::<std::collections::BTreeSet<_>>();
    if distinct.len() < 2 {
        return Err(Error::DegenerateProbe(format!("only {} class present", distinct.len())));
    }
    if !(config.lr > 0.0) || !(config.l2 >= 0.0) {
        return Err(Error::Config(format!("probe lr {} / l2 {} out of range", config.lr, config.l2)));
    }
    let n = data.len() as f64;
    let mut mean = vec![0.0; d];
    for (e, _) in data {
        for (m, v) in mean.iter_mut().zip(e.values()) {
            *m += v / n;
        }
    }
    let mut std = vec![0.0; d];
    for (e, _) in data {
        for ((s, v), m) in std.iter_mut().zip(e.values()).zip(&mean) {
            *s += (v - m).powi(2) / n;
        }
    }
    // constant features standardize to zero rather than dividing by zero
    let std: Vec<f64> = std.iter().map(|v| if *v > 1e-24 { v.sqrt() } else { 1.0 }).collect();
    let mut model = ProbeModel {
        weight: vec![0.0; d * k],
        bias: vec![0.0; k],
        dim: d,
        num_classes: k,
        feature_mean: mean,
        feature_std: std,
    };
    let xs: Vec<Vec<f64>> = data.iter().map(|(e, _)| model.standardize(e.values())).collect();
    let shrink = 1.0 / (1.0 + config.lr * config.l2);
    let mut gw = vec![0.0; d * k];
    let mut gb = vec![0.0; k];
    for _ in 0..config.epochs {
        gw.iter_mut().for_each(|v| *v = 0.0);
        gb.iter_mut().for_each(|v| *v = 0.0);
        for (x, (_, label)) in xs.iter().zip(data) {
            let mut p = model.logits(x);
            softmax_in_place(&mut p);
            p[*label] -= 1.0;
            for (i, xi) in x.iter().enumerate() {
                for (g, pj) in gw[i * k..(i + 1) * k].iter_mut().zip(&p) {
                    *g += xi * pj;
                }
            }
            for (g, pj) in gb.iter_mut().zip(&p) {
                *g += pj;
            }
        }
        for (w, g) in model.weight.iter_mut().zip(&gw) {
            *w = (*w - config.lr * g / n) * shrink;
        }
        for (b, g) in model.bias.iter_mut().zip(&gb) {
            *b -= config.lr * g / n;
        }
    }
    if model.weight.iter().chain(&model.bias).any(|v| !v.is_finite()) {
        return Err(Error::NumericalOverflow("probe weights diverged".into()));
    }
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub overall: f64,
    /// Accuracy on each class that has at least one clip.
    pub per_class: BTreeMap<usize, f64>,
    pub class_counts: BTreeMap<usize, usize>,
}

/// Accuracy of hard predictions against labels.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<AccuracyReport> {
    if predictions.len() != labels.len() {
        return Err(Error::MisalignedPredictions(format!(
            "{} predictions for {} labels",
            predictions.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::NoData);
    }
    let mut hits: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (&p, &l) in predictions.iter().zip(labels) {
        let e = hits.entry(l).or_default();
        e.0 += (p == l) as usize;
        e.1 += 1;
    }
    let correct: usize = hits.values().map(|h| h.0).sum();
    Ok(AccuracyReport {
        overall: correct as f64 / labels.len() as f64,
        per_class: hits.iter().map(|(&c, &(k, n))| (c, k as f64 / n as f64)).collect(),
        class_counts: hits.iter().map(|(&c, &(_, n))| (c, n)).collect(),
    })
}

pub fn probe_accuracy(model: &ProbeModel, data: &[(Embedding, usize)]) -> Result<AccuracyReport> {
    let predictions = data.iter().map(|(e, _)| model.predict(e)).collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = data.iter().map(|(_, l)| *l).collect();
    accuracy(&predictions, &labels)
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() || p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::NotAProbability(format!("{p:?}")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > 1e-6 {
        return Err(Error::NotAProbability(format!("sums to {total}")));
    }
    Ok(())
}

/// Elementwise mean of two class distributions.
pub fn ensemble_probs(p: &[f64], q: &[f64]) -> Result<Vec<f64>> {
    if p.len() != q.len() {
        return Err(Error::NotAProbability(format!("lengths {} and {}", p.len(), q.len())));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    Ok(p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect())
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributionCounts {
    pub video_only: usize,
    pub motion_only: usize,
    pub both: usize,
    pub neither: usize,
}

impl AttributionCounts {
    pub fn total(&self) -> usize {
        self.video_only + self.motion_only + self.both + self.neither
    }

    pub fn as_array(&self) -> [usize; 4] {
        [self.video_only, self.motion_only, self.both, self.neither]
    }
}

/// Buckets every clip of each class by which modality classified it correctly.
pub fn attribution_counts(
    video_preds: &[usize],
    motion_preds: &[usize],
    labels: &[usize],
) -> Result<BTreeMap<usize, AttributionCounts>> {
    if video_preds.len() != labels.len() || motion_preds.len() != labels.len() {
        return Err(Error::MisalignedPredictions(format!(
            "{} video, {} motion predictions for {} labels",
            video_preds.len(),
            motion_preds.len(),
            labels.len()
        )));
    }
    let mut out: BTreeMap<usize, AttributionCounts> = BTreeMap::new();
    for ((&v, &m), &l) in video_preds.iter().zip(motion_preds).zip(labels) {
        let c = out.entry(l).or_default();
        match (v == l, m == l) {
            (true, false) => c.video_only += 1,
            (false, true) => c.motion_only += 1,
            (true, true) => c.both += 1,
            (false, false) => c.neither += 1,
        }
    }
    Ok(out)
}

/// The metrics document every command writes. The five metric keys are
/// always present (null when a command does not produce them).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub command: String,
    pub seed: u64,
    pub roc_auc: Option<f64>,
    pub probe_acc_overall: Option<f64>,
    pub probe_acc_per_class: Option<BTreeMap<String, f64>>,
    pub attribution: Option<BTreeMap<String, [usize; 4]>>,
    pub loss_curve: Vec<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
    pub config: serde_json::Value,
}

impl Metrics {
    pub fn new(command: &str, seed: u64, config: serde_json::Value) -> Self {
        Self {
            command: command.into(),
            seed,
            roc_auc: None,
            probe_acc_overall: None,
            probe_acc_per_class: None,
            attribution: None,
            loss_curve: Vec::new(),
            extra: BTreeMap::new(),
            config,
        }
    }

    pub fn set_accuracy(&mut self, report: &AccuracyReport) {
        self.probe_acc_overall = Some(report.overall);
        self.probe_acc_per_class = Some(report.per_class.iter().map(|(c, a)| (c.to_string(), *a)).collect());
    }

    pub fn set_attribution(&mut self, counts: &BTreeMap<usize, AttributionCounts>) {
        self.attribution = Some(counts.iter().map(|(c, a)| (c.to_string(), a.as_array())).collect());
    }
}
