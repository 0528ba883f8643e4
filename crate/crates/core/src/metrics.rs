//! Evaluation metrics: a classifier-based inception-style score for
//! generated micrographs and per-field RMSE for performance predictions.

use serde::{Deserialize, Serialize};

use crate::domain::{alloy_index, SampleRecord, ALLOYS};
use crate::error::{Error, Result};
use crate::gan::check_images;
use crate::nn;
use crate::seed;
use crate::tensor::{BundleKind, Graph, ModelBundle, Optimizer, ParamStore, Rule, Tensor, Var};

pub const CLASSES: usize = ALLOYS.len();
pub const SPLITS: usize = 10;
const CLAMP: f64 = 1e-12;
const CHANNELS: [usize; 4] = [1, 8, 16, 32];
const POSITIONS: usize = 4 * 4;
const WIDTH: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            epochs: 40,
            lr: 3e-3,
            batch: 32,
            seed: 0,
        }
    }
}

/// 14-way alloy classifier standing in for the inception network.
#[derive(Clone, Debug)]
pub struct MetricClassifier {
    pub params: ParamStore,
}

impl MetricClassifier {
    pub fn init(seed: u64) -> Self {
        let mut rng = seed::rng(seed, "classifier-init");
        let mut p = ParamStore::new();
        for (i, w) in CHANNELS.windows(2).enumerate() {
            nn::add_conv(&mut p, &format!("conv{i}"), w[0], w[1], 3, &mut rng).expect("fresh");
        }
        nn::add_dense(&mut p, "fc", CHANNELS[3], WIDTH, &mut rng).expect("fresh");
        nn::add_dense(&mut p, "out", WIDTH, CLASSES, &mut rng).expect("fresh");
        MetricClassifier { params: p }
    }

    pub fn logits(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let b = g.shape(x)[0];
        let mut h = x;
        for i in 0..CHANNELS.len() - 1 {
            h = nn::conv(g, &self.params, &format!("conv{i}"), h, 2, 1)?;
            h = g.relu(h);
        }
        // global average pooling: the class signal is cavity statistics,
        // not where cavities sit
        let c = CHANNELS[3];
        let h = g.reshape(h, &[b * c, POSITIONS])?;
        let avg = g.constant(Tensor::full([POSITIONS, 1], 1.0 / POSITIONS as f64));
        let h = g.matmul(h, avg)?;
        let h = g.reshape(h, &[b, c])?;
        let h = nn::dense(g, &self.params, "fc", h)?;
        let h = g.relu(h);
        nn::dense(g, &self.params, "out", h)
    }

    /// `p(y|x)` rows for images `[B, 1, 32, 32]`.
    pub fn probabilities(&self, images: &Tensor) -> Result<Vec<Vec<f64>>> {
        check_images("classify", images)?;
        let mut out = Vec::with_capacity(images.shape()[0]);
        for start in (0..images.shape()[0]).step_by(64) {
            let end = (start + 64).min(images.shape()[0]);
            let mut g = Graph::new();
            let x = g.constant(images.slice0(start, end)?);
            let l = self.logits(&mut g, x)?;
            let p = g.softmax(l);
            out.extend(g.value(p).rows().map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    pub fn to_bundle(&self) -> ModelBundle {
        let mut b = ModelBundle::new(BundleKind::MetricClassifier);
        self.params.export("", &mut b);
        b
    }

    pub fn from_bundle(b: &ModelBundle) -> Result<Self> {
        b.expect_kind(BundleKind::MetricClassifier)?;
        let mut c = MetricClassifier::init(0);
        c.params.import("", b)?;
        Ok(c)
    }
}

fn labels(samples: &[SampleRecord]) -> Result<Vec<usize>> {
    samples
        .iter()
        .map(|s| {
            alloy_index(&s.composition.alloy_name).ok_or_else(|| Error::Sample {
                id: s.id.clone(),
                message: format!("unknown alloy `{}`", s.composition.alloy_name),
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassifierReport {
    pub epoch_losses: Vec<f64>,
    pub held_out_accuracy: f64,
}

/// Trains the alloy classifier on real images and reports accuracy on
/// `held_out`.
pub fn train_metric_classifier(
    train: &[SampleRecord],
    held_out: &[SampleRecord],
    cfg: &ClassifierConfig,
) -> Result<(MetricClassifier, ClassifierReport)> {
    let y = labels(train)?;
    let mut distinct = y.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::invalid(
            "classifier training needs at least two alloy classes",
        ));
    }
    if cfg.batch == 0 {
        return Err(Error::field("batch", "must be >= 1"));
    }
    let mut model = MetricClassifier::init(cfg.seed);
    let mut opt = Optimizer::new(Rule::RmsProp, cfg.lr, 0.0)?;
    let mut rng = seed::rng(cfg.seed, "classifier-shuffle");
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let order = nn::shuffled(train.len(), &mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let mut g = Graph::new();
            let x = g.constant(nn::image_batch(chunk.iter().map(|&i| &train[i].micrograph)));
            let l = model.logits(&mut g, x)?;
            let ys: Vec<usize> = chunk.iter().map(|&i| y[i]).collect();
            let loss = g.softmax_cross_entropy(l, &ys)?;
            total += g.value(loss).item() * chunk.len() as f64;
            g.backward(loss, &mut [&mut model.params])?;
            opt.step(&mut model.params);
        }
        epoch_losses.push(total / train.len() as f64);
    }
    let held_out_accuracy = if held_out.is_empty() {
        f64::NAN
    } else {
        accuracy(&model, held_out)?
    };
    Ok((
        model,
        ClassifierReport {
            epoch_losses,
            held_out_accuracy,
        },
    ))
}

pub fn accuracy(model: &MetricClassifier, samples: &[SampleRecord]) -> Result<f64> {
    let y = labels(samples)?;
    let p = model.probabilities(&nn::image_batch(samples.iter().map(|s| &s.micrograph)))?;
    let hits = p
        .iter()
        .zip(&y)
        .filter(|(row, &label)| argmax(row) == label)
        .count();
    Ok(hits as f64 / samples.len() as f64)
}

fn argmax(row: &[f64]) -> usize {
    row.iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Order-independent sum.
fn stable_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// `exp(mean_x KL(p(y|x) || p̄(y)))` for a set of probability rows.
pub fn score_from_probabilities(probs: &[Vec<f64>]) -> Result<f64> {
    if probs.len() < 2 {
        return Err(Error::invalid(
            "inception-style score needs at least two images",
        ));
    }
    let k = probs[0].len();
    if k == 0 || probs.iter().any(|p| p.len() != k) {
        return Err(Error::invalid(
            "probability rows must share a nonzero width",
        ));
    }
    let n = probs.len() as f64;
    let marginal: Vec<f64> = (0..k)
        .map(|c| stable_sum(probs.iter().map(|p| p[c]).collect()) / n)
        .collect();
    let kls: Vec<f64> = probs
        .iter()
        .map(|p| {
            p.iter()
                .zip(&marginal)
                .map(|(&pi, &mi)| {
                    let pi = pi.max(CLAMP);
                    pi * (pi.ln() - mi.max(CLAMP).ln())
                })
                .sum()
        })
        .collect();
    Ok((stable_sum(kls) / n).exp())
}

/// Score over the full batch, with the standard deviation of the score
/// across up to 10 contiguous splits (each split needs two images).
pub fn score_with_splits(probs: &[Vec<f64>]) -> Result<(f64, f64)> {
    let score = score_from_probabilities(probs)?;
    let splits = SPLITS.min(probs.len() / 2);
    if splits < 2 {
        return Ok((score, 0.0));
    }
    let per: Vec<f64> = (0..splits)
        .map(|s| {
            let lo = s * probs.len() / splits;
            let hi = (s + 1) * probs.len() / splits;
            score_from_probabilities(&probs[lo..hi])
        })
        .collect::<Result<_>>()?;
    let mean = per.iter().sum::<f64>() / splits as f64;
    let var = per.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / splits as f64;
    Ok((score, var.sqrt()))
}

/// Inception-style score of generated images `[N, 1, 32, 32]` under the
/// metric classifier: `(score, stderr)`.
pub fn inception_style_score(images: &Tensor, classifier: &MetricClassifier) -> Result<(f64, f64)> {
    check_images("inception_style_score", images)?;
    if images.shape()[0] < 2 {
        return Err(Error::invalid(
            "inception-style score needs at least two images",
        ));
    }
    score_with_splits(&classifier.probabilities(images)?)
}

/// Per-field `sqrt(mean((pred - ref)^2))` over aligned vectors.
pub fn rmse_score<R: AsRef<[f64]>>(pred: &[R], reference: &[R]) -> Result<Vec<f64>> {
    if pred.len() != reference.len() {
        return Err(Error::invalid(format!(
            "rmse_score: {} predictions vs {} references",
            pred.len(),
            reference.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::invalid("rmse_score needs at least one pair"));
    }
    let width = pred[0].as_ref().len();
    let mut sq = vec![0.0; width];
    for (p, r) in pred.iter().zip(reference) {
        let (p, r) = (p.as_ref(), r.as_ref());
        if p.len() != width || r.len() != width {
            return Err(Error::invalid("rmse_score: vectors differ in length"));
        }
        for j in 0..width {
            sq[j] += (p[j] - r[j]).powi(2);
        }
    }
    let n = pred.len() as f64;
    Ok(sq.into_iter().map(|s| (s / n).sqrt()).collect())
}
