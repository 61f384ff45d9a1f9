//! Masked cross-entropy, Adam, the two evaluation metrics and the training
//! loop.
//!
//! Gradients for a batch are accumulated in fixed-size chunks of examples and
//! the chunk sums are added in chunk order, so the update sequence is the same
//! whether or not chunks are computed in parallel.

use core::ops::ControlFlow;

use alloc::vec::Vec;

use crate::error::{config_err, data_err, shape_err, usage, Result};
use crate::hash::SplitMix64;
use crate::mixer::{backward_into, forward, HeadKind, Logits, ModelConfig, ModelParams};
use crate::projection::FeatureMatrix;
use crate::real::Real;

/// Label slot excluded from the loss.
pub const IGNORE: usize = usize::MAX;
/// Gold label absent from the training inventory: never trained on, always
/// scored as wrong.
pub const UNSEEN: usize = usize::MAX - 1;

const CHUNK: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Metric {
    /// Correct tokens over all gold tokens.
    #[default]
    ExactMatch,
    /// Correct sequences over all sequences.
    IntentAccuracy,
}

impl Metric {
    pub fn for_head(head: HeadKind) -> Self {
        if head.is_token() {
            Self::ExactMatch
        } else {
            Self::IntentAccuracy
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub seed: u64,
    pub select_best_by: Metric,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 256,
            epochs: 80,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            seed: 0,
            select_best_by: Metric::ExactMatch,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(config_err!("learning_rate must be finite and non-negative, got {}", self.learning_rate));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(config_err!("batch_size and epochs must be at least 1"));
        }
        Ok(())
    }
}

/// Gold annotation of one example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Target {
    /// One label per original token (before truncation).
    Tokens(Vec<usize>),
    Class(usize),
}

/// A projected example ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub features: FeatureMatrix,
    pub target: Target,
}

impl EncodedExample {
    /// Per-position training labels, `IGNORE` outside the valid prefix.
    fn position_labels(&self, seq_len: usize) -> Vec<usize> {
        match &self.target {
            Target::Tokens(labels) => (0..seq_len)
                .map(|t| match labels.get(t) {
                    Some(&l) if t < self.features.valid_len() && l != UNSEEN => l,
                    _ => IGNORE,
                })
                .collect(),
            Target::Class(c) => alloc::vec![if *c == UNSEEN { IGNORE } else { *c }],
        }
    }
}

/// Sum of `-log softmax` over positions `< valid_len` whose label is not
/// `IGNORE`, with the gradient scaled by `scale`. Returns `(sum, count)`.
fn cross_entropy_sum<S: Real>(
    logits: &Logits<S>,
    labels: &[usize],
    valid_len: usize,
    scale: S,
    grad: &mut Logits<S>,
) -> Result<(S, usize)> {
    if labels.len() != logits.positions {
        return Err(shape_err!("{} labels for {} logit positions", labels.len(), logits.positions));
    }
    let mut total = S::zero();
    let mut count = 0;
    for (t, &label) in labels.iter().enumerate().take(valid_len.min(logits.positions)) {
        if label == IGNORE {
            continue;
        }
        if label >= logits.outputs {
            return Err(data_err!("label {label} outside the {} head outputs", logits.outputs));
        }
        let row = logits.row(t);
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let sum_exp: S = row.iter().map(|&v| (v - max).exp()).sum();
        let lse = max + sum_exp.ln();
        total += lse - row[label];
        count += 1;
        let g = grad.row_mut(t);
        for (k, (gk, &v)) in g.iter_mut().zip(row).enumerate() {
            let p = (v - lse).exp();
            *gk += scale * (p - if k == label { S::one() } else { S::zero() });
        }
    }
    Ok((total, count))
}

/// Mean masked cross-entropy and its gradient w.r.t. the logits. Positions at
/// or beyond `valid_len`, and `IGNORE` labels, contribute nothing.
pub fn cross_entropy_masked<S: Real>(logits: &Logits<S>, labels: &[usize], valid_len: usize) -> Result<(S, Logits<S>)> {
    let mut grad = Logits::zeros(logits.outputs, logits.positions);
    let (sum, count) = cross_entropy_sum(logits, labels, valid_len, S::one(), &mut grad)?;
    if count == 0 {
        return Err(usage!("every position is masked; the loss is undefined"));
    }
    let inv = S::one() / S::lit(count as f64);
    grad.data.iter_mut().for_each(|g| *g *= inv);
    Ok((sum * inv, grad))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState<S> {
    pub first: Vec<S>,
    pub second: Vec<S>,
    pub step: u64,
}

impl<S: Real> OptimizerState<S> {
    pub fn new(params: &ModelParams<S>) -> Self {
        let n = params.len();
        Self { first: alloc::vec![S::zero(); n], second: alloc::vec![S::zero(); n], step: 0 }
    }
}

/// One bias-corrected Adam update with a constant learning rate.
pub fn adam_step<S: Real>(
    params: &mut ModelParams<S>,
    grads: &ModelParams<S>,
    state: &mut OptimizerState<S>,
    tc: &TrainConfig,
) -> Result<()> {
    let g = grads.to_flat();
    if g.len() != state.first.len() || g.len() != params.len() {
        return Err(shape_err!("optimizer state holds {} entries, gradient {}", state.first.len(), g.len()));
    }
    state.step += 1;
    let (b1, b2) = (S::lit(tc.adam_beta1), S::lit(tc.adam_beta2));
    let c1 = S::one() - S::lit(libm::pow(tc.adam_beta1, state.step as f64));
    let c2 = S::one() - S::lit(libm::pow(tc.adam_beta2, state.step as f64));
    let lr = S::lit(tc.learning_rate);
    let eps = S::lit(tc.adam_eps);
    let mut offset = 0;
    params.for_each_tensor_mut(|t| {
        for (k, p) in t.data.iter_mut().enumerate() {
            let i = offset + k;
            let m = b1 * state.first[i] + (S::one() - b1) * g[i];
            let v = b2 * state.second[i] + (S::one() - b2) * g[i] * g[i];
            state.first[i] = m;
            state.second[i] = v;
            *p -= lr * (m / c1) / ((v / c2).sqrt() + eps);
        }
        offset += t.data.len();
    });
    Ok(())
}

/// Micro-averaged token accuracy. `pred[i]` may be shorter than `gold[i]`
/// (truncated input); missing predictions count as wrong.
pub fn exact_match_accuracy(pred: &[Vec<usize>], gold: &[Vec<usize>]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(usage!("{} predicted sequences for {} gold sequences", pred.len(), gold.len()));
    }
    let mut correct = 0usize;
    let mut total = 0usize;
    for (i, (p, g)) in pred.iter().zip(gold).enumerate() {
        if p.len() > g.len() {
            return Err(usage!("example {i}: {} predictions for {} gold tokens", p.len(), g.len()));
        }
        correct += p.iter().zip(g).filter(|(a, b)| a == b).count();
        total += g.len();
    }
    if total == 0 {
        return Err(usage!("no gold tokens to score"));
    }
    Ok(correct as f64 / total as f64)
}

pub fn intent_accuracy(pred: &[usize], gold: &[usize]) -> Result<f64> {
    if pred.len() != gold.len() {
        return Err(usage!("{} predictions for {} gold labels", pred.len(), gold.len()));
    }
    if gold.is_empty() {
        return Err(usage!("no examples to score"));
    }
    Ok(pred.iter().zip(gold).filter(|(a, b)| a == b).count() as f64 / gold.len() as f64)
}

/// Model output for one example.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prediction {
    Tokens(Vec<usize>),
    Class(usize),
}

pub fn predict<S: Real>(params: &ModelParams<S>, cfg: &ModelConfig, features: &FeatureMatrix) -> Result<Prediction> {
    let (logits, _) = forward(features, params, cfg)?;
    Ok(match cfg.head {
        HeadKind::TokenLabels { .. } => Prediction::Tokens((0..features.valid_len()).map(|t| logits.argmax(t)).collect()),
        HeadKind::PooledClass { .. } => Prediction::Class(logits.argmax(0)),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metric: f64,
    pub loss: f64,
    pub predictions: Vec<Prediction>,
}

fn map_examples<T: Send, F>(examples: &[EncodedExample], f: F) -> Result<Vec<T>>
where
    F: Fn(&EncodedExample) -> Result<T> + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        examples.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        examples.iter().map(f).collect()
    }
}

/// Scores a split. The metric follows the head: token accuracy for tagging,
/// sequence accuracy for classification.
pub fn evaluate<S: Real>(params: &ModelParams<S>, cfg: &ModelConfig, examples: &[EncodedExample]) -> Result<Evaluation> {
    let per_example = map_examples(examples, |ex| {
        let (logits, _) = forward(&ex.features, params, cfg)?;
        let labels = ex.position_labels(logits.positions);
        let mut scratch = Logits::zeros(logits.outputs, logits.positions);
        let valid = if cfg.head.is_token() { ex.features.valid_len() } else { 1 };
        let (loss, count) = cross_entropy_sum(&logits, &labels, valid, S::zero(), &mut scratch)?;
        let pred = match cfg.head {
            HeadKind::TokenLabels { .. } => Prediction::Tokens((0..ex.features.valid_len()).map(|t| logits.argmax(t)).collect()),
            HeadKind::PooledClass { .. } => Prediction::Class(logits.argmax(0)),
        };
        Ok((pred, loss.as_f64(), count))
    })?;
    let loss_sum: f64 = per_example.iter().map(|r| r.1).sum();
    let count: usize = per_example.iter().map(|r| r.2).sum();
    let predictions: Vec<Prediction> = per_example.into_iter().map(|r| r.0).collect();
    let metric = score(&predictions, examples)?;
    Ok(Evaluation { metric, loss: if count == 0 { 0.0 } else { loss_sum / count as f64 }, predictions })
}

/// Metric over predictions aligned with `examples`.
pub fn score(predictions: &[Prediction], examples: &[EncodedExample]) -> Result<f64> {
    let mut token_pred = Vec::new();
    let mut token_gold = Vec::new();
    let mut class_pred = Vec::new();
    let mut class_gold = Vec::new();
    for (p, ex) in predictions.iter().zip(examples) {
        match (p, &ex.target) {
            (Prediction::Tokens(p), Target::Tokens(g)) => {
                token_pred.push(p.clone());
                token_gold.push(g.clone());
            }
            (Prediction::Class(p), Target::Class(g)) => {
                class_pred.push(*p);
                class_gold.push(*g);
            }
            _ => return Err(usage!("prediction kind does not match the example target")),
        }
    }
    if !class_gold.is_empty() {
        intent_accuracy(&class_pred, &class_gold)
    } else {
        exact_match_accuracy(&token_pred, &token_gold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_metric: f64,
    pub wallclock_seconds: f64,
}

/// Hooks into the training loop. Supplies wall-clock time (unavailable in
/// `no_std`) and receives one log record per epoch.
pub trait TrainObserver {
    fn elapsed_seconds(&self) -> f64 {
        0.0
    }

    /// Called after each epoch; `Break` ends training early.
    fn on_epoch(&mut self, _log: &EpochLog) -> ControlFlow<()> {
        ControlFlow::Continue(())
    }
}

impl TrainObserver for () {}

#[derive(Debug, Clone)]
pub struct TrainOutcome<S> {
    pub best: ModelParams<S>,
    pub best_epoch: usize,
    pub best_metric: f64,
    pub log: Vec<EpochLog>,
}

fn check_labels(examples: &[EncodedExample], head: HeadKind, split: &str, allow_unseen: bool) -> Result<()> {
    let outputs = head.outputs();
    for (i, ex) in examples.iter().enumerate() {
        let labels: &[usize] = match (&ex.target, head) {
            (Target::Tokens(l), HeadKind::TokenLabels { .. }) => l,
            (Target::Class(c), HeadKind::PooledClass { .. }) => core::slice::from_ref(c),
            _ => return Err(data_err!("{split} example {i}: annotation kind does not match the model head")),
        };
        for &l in labels {
            if l == UNSEEN && allow_unseen {
                continue;
            }
            if l >= outputs {
                return Err(data_err!("{split} example {i}: label index {l} outside the inventory of {outputs}"));
            }
        }
    }
    Ok(())
}

/// Gradient of the batch loss (token-level mean) accumulated into `grads`.
/// Returns the summed loss and the number of scored positions.
fn batch_gradients<S: Real>(
    params: &ModelParams<S>,
    cfg: &ModelConfig,
    batch: &[&EncodedExample],
    grads: &mut ModelParams<S>,
) -> Result<(f64, usize)> {
    let positions = if cfg.head.is_token() { cfg.seq_len } else { 1 };
    let count: usize =
        batch.iter().map(|ex| ex.position_labels(positions).iter().take(valid_positions(ex, cfg)).filter(|&&l| l != IGNORE).count()).sum();
    grads.fill_zero();
    if count == 0 {
        return Ok((0.0, 0));
    }
    let scale = S::one() / S::lit(count as f64);
    let chunk_grad = |chunk: &[&EncodedExample]| -> Result<(ModelParams<S>, f64)> {
        let mut g = ModelParams::zeros(cfg);
        let mut loss = 0.0;
        for ex in chunk {
            let (logits, record) = forward(&ex.features, params, cfg)?;
            let labels = ex.position_labels(logits.positions);
            let mut upstream = Logits::zeros(logits.outputs, logits.positions);
            let (l, _) = cross_entropy_sum(&logits, &labels, valid_positions(ex, cfg), scale, &mut upstream)?;
            loss += l.as_f64();
            backward_into(&record, &upstream, params, cfg, &mut g, false)?;
        }
        Ok((g, loss))
    };

    #[cfg(feature = "parallel")]
    let parts: Vec<(ModelParams<S>, f64)> = {
        use rayon::prelude::*;
        batch.par_chunks(CHUNK).map(chunk_grad).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let parts: Vec<(ModelParams<S>, f64)> = batch.chunks(CHUNK).map(chunk_grad).collect::<Result<_>>()?;

    let mut loss = 0.0;
    for (g, l) in &parts {
        grads.add_scaled(S::one(), g);
        loss += l;
    }
    Ok((loss, count))
}

fn valid_positions(ex: &EncodedExample, cfg: &ModelConfig) -> usize {
    if cfg.head.is_token() {
        ex.features.valid_len()
    } else {
        1
    }
}

/// Trains from a fresh initialization and returns the parameters of the best
/// validation epoch (the earliest one on ties) together with the full log.
pub fn train<S: Real>(
    cfg: &ModelConfig,
    train_set: &[EncodedExample],
    val_set: &[EncodedExample],
    tc: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome<S>> {
    let params = ModelParams::<S>::init(cfg, tc.seed);
    train_from(cfg, params, train_set, val_set, tc, observer)
}

/// As [`train`], starting from the given parameters.
pub fn train_from<S: Real>(
    cfg: &ModelConfig,
    mut params: ModelParams<S>,
    train_set: &[EncodedExample],
    val_set: &[EncodedExample],
    tc: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainOutcome<S>> {
    cfg.validate()?;
    tc.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(data_err!("training and validation splits must both be non-empty"));
    }
    if tc.select_best_by != Metric::for_head(cfg.head) {
        return Err(config_err!("select_best_by {:?} does not fit a {:?} head", tc.select_best_by, cfg.head));
    }
    check_labels(train_set, cfg.head, "train", false)?;
    check_labels(val_set, cfg.head, "validation", true)?;

    let mut state = OptimizerState::new(&params);
    let mut grads = ModelParams::zeros(cfg);
    let mut rng = SplitMix64::new(tc.seed ^ 0x0005_eed0_fba7_c4e5);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(tc.epochs);
    let mut best: Option<(usize, f64, ModelParams<S>)> = None;

    for epoch in 1..=tc.epochs {
        rng.shuffle(&mut order);
        let mut loss_sum = 0.0;
        let mut loss_count = 0usize;
        for idx in order.chunks(tc.batch_size) {
            let batch: Vec<&EncodedExample> = idx.iter().map(|&i| &train_set[i]).collect();
            let (loss, count) = batch_gradients(&params, cfg, &batch, &mut grads)?;
            loss_sum += loss;
            loss_count += count;
            if count > 0 {
                adam_step(&mut params, &grads, &mut state, tc)?;
            }
        }
        let eval = evaluate(&params, cfg, val_set)?;
        let entry = EpochLog {
            epoch,
            train_loss: if loss_count == 0 { 0.0 } else { loss_sum / loss_count as f64 },
            val_metric: eval.metric,
            wallclock_seconds: observer.elapsed_seconds(),
        };
        let flow = observer.on_epoch(&entry);
        log.push(entry);
        if best.as_ref().is_none_or(|(_, m, _)| eval.metric > *m) {
            best = Some((epoch, eval.metric, params.clone()));
        }
        if flow.is_break() {
            break;
        }
    }
    let (best_epoch, best_metric, best) = best.expect("at least one epoch runs");
    Ok(TrainOutcome { best, best_epoch, best_metric, log })
}
