use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::model::ReachabilityModel;
use super::{LabeledPair, ReachabilityError};
use crate::autodiff::{self, Graph, OptimizerConfig, OptimizerState, ParamId, Tensor};
use crate::scalar::Scalar;
use crate::seeding::stream_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Anneal the learning rate to zero along a half cosine over all steps.
    pub cosine_decay: bool,
    /// Arithmetic used while training; the returned model is always `f64`.
    pub precision: Precision,
    /// Share of walks held out for evaluation.
    pub holdout_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 14,
            batch: 128,
            lr: 0.01,
            momentum: 0.9,
            weight_decay: 1e-7,
            cosine_decay: true,
            precision: Precision::Single,
            holdout_fraction: 0.1,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Running mean over the epoch's minibatches.
    pub train_loss: f64,
    pub train_accuracy: f64,
    pub holdout_loss: f64,
    pub holdout_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub train_pairs: usize,
    pub holdout_pairs: usize,
    pub holdout_walks: Vec<usize>,
    pub initial_train_loss: f64,
    pub initial_holdout_accuracy: f64,
    pub final_train_loss: f64,
    pub epochs: Vec<EpochStats>,
}

impl TrainReport {
    pub fn final_holdout_accuracy(&self) -> f64 {
        self.epochs
            .last()
            .map_or(self.initial_holdout_accuracy, |e| e.holdout_accuracy)
    }
}

/// `log(1 + e^z) − y·z`, stable for large `|z|`.
fn logistic_loss(z: f64, y: f64) -> f64 {
    z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()
}

fn walk_split(pairs: &[LabeledPair], fraction: f64, seed: u64) -> Vec<usize> {
    let mut walks: Vec<usize> = pairs.iter().map(|p| p.walk).collect();
    walks.sort_unstable();
    walks.dedup();
    if walks.len() < 2 || fraction <= 0.0 {
        return Vec::new();
    }
    walks.shuffle(&mut stream_rng(seed, 0x5EED));
    let n = ((walks.len() as f64 * fraction).round() as usize).clamp(1, walks.len() - 1);
    let mut held = walks[..n].to_vec();
    held.sort_unstable();
    held
}

/// Mean logistic loss and accuracy (score > 0.5 predicts 1).
pub(crate) fn evaluate<S: Scalar>(
    model: &ReachabilityModel<S>,
    pairs: &[&LabeledPair],
) -> Result<(f64, f64), ReachabilityError> {
    if pairs.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let (mut loss, mut correct) = (0.0, 0usize);
    for chunk in pairs.chunks(256) {
        let z = logits(model, &mut Graph::new(), chunk)?;
        for (z, p) in z.iter().zip(chunk) {
            let y = f64::from(p.label);
            loss += logistic_loss(*z, y);
            correct += usize::from((*z > 0.0) == (p.label == 1));
        }
    }
    Ok((
        loss / pairs.len() as f64,
        correct as f64 / pairs.len() as f64,
    ))
}

fn logits<S: Scalar>(
    model: &ReachabilityModel<S>,
    graph: &mut Graph<S>,
    batch: &[&LabeledPair],
) -> Result<Vec<f64>, ReachabilityError> {
    let z = logits_var(model, graph, batch)?;
    Ok(graph.value(z).values().iter().map(|v| v.as_f64()).collect())
}

fn logits_var<S: Scalar>(
    model: &ReachabilityModel<S>,
    graph: &mut Graph<S>,
    batch: &[&LabeledPair],
) -> Result<autodiff::Var, ReachabilityError> {
    let obs: Vec<_> = batch
        .iter()
        .map(|p| &p.obs_a)
        .chain(batch.iter().map(|p| &p.obs_b))
        .collect();
    let e = model.embed_graph(graph, &obs)?;
    let a = graph.slice_rows(e, 0, batch.len())?;
    let b = graph.slice_rows(e, batch.len(), batch.len())?;
    Ok(model.logits_graph(graph, a, b)?)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    Single,
    Double,
}

/// [`train_reachability`] in `cfg.precision`, returning the model in `f64`.
pub fn train_model(
    pairs: &[LabeledPair],
    rays: usize,
    cfg: &TrainConfig,
) -> Result<(ReachabilityModel<f64>, TrainReport), ReachabilityError> {
    match cfg.precision {
        Precision::Single => {
            train_reachability::<f32>(pairs, rays, cfg).map(|(m, r)| (m.cast(), r))
        }
        Precision::Double => train_reachability::<f64>(pairs, rays, cfg),
    }
}

/// Logistic regression of pair labels with SGD + momentum.
///
/// Pairs from a `holdout_fraction` share of walks are held out; the report
/// logs per-epoch training and holdout accuracy.
pub fn train_reachability<S: Scalar>(
    pairs: &[LabeledPair],
    rays: usize,
    cfg: &TrainConfig,
) -> Result<(ReachabilityModel<S>, TrainReport), ReachabilityError> {
    if pairs.is_empty() {
        return Err(ReachabilityError::NoPairs);
    }
    let mut model = ReachabilityModel::<S>::new(rays, &mut stream_rng(cfg.seed, 0))?;
    let holdout_walks = walk_split(pairs, cfg.holdout_fraction, cfg.seed);
    let (holdout, mut train): (Vec<&LabeledPair>, Vec<&LabeledPair>) = pairs
        .iter()
        .partition(|p| holdout_walks.binary_search(&p.walk).is_ok());
    let (initial_train_loss, _) = evaluate(&model, &train)?;
    let (_, initial_holdout_accuracy) = evaluate(&model, &holdout)?;
    info!(
        "reachability: {} train / {} holdout pairs, initial loss {initial_train_loss:.4}",
        train.len(),
        holdout.len()
    );

    let params: Vec<ParamId> = model.store.ids().collect();
    let mut opt = OptimizerState::new(OptimizerConfig::sgd(cfg.lr, cfg.momentum, cfg.weight_decay));
    let mut rng = stream_rng(cfg.seed, 1);
    let mut epochs = Vec::with_capacity(cfg.epochs);
    let batch = cfg.batch.max(1);
    let total_steps = (cfg.epochs * train.len().div_ceil(batch)).max(1);
    for epoch in 0..cfg.epochs {
        train.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in train.chunks(batch) {
            let mut graph = Graph::new();
            let z = logits_var(&model, &mut graph, chunk)?;
            let n = chunk.len() as f64;
            let mut upstream = Vec::with_capacity(chunk.len());
            for (zv, p) in graph.value(z).values().iter().zip(chunk) {
                let (zf, y) = (zv.as_f64(), f64::from(p.label));
                loss_sum += logistic_loss(zf, y);
                correct += usize::from((zf > 0.0) == (p.label == 1));
                upstream.push(S::lit((autodiff::sigmoid(zf) - y) / n));
            }
            let grads = graph.backward(z, &Tensor::new(vec![chunk.len(), 1], upstream)?)?;
            drop(graph);
            model.store.accumulate(grads);
            if cfg.cosine_decay {
                let progress = opt.steps() as f64 / total_steps as f64;
                opt.config.lr = cfg.lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
            }
            opt.step(&mut model.store, &params)?;
        }
        let (holdout_loss, holdout_accuracy) = evaluate(&model, &holdout)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            holdout_loss,
            holdout_accuracy,
        };
        info!(
            "epoch {epoch}: train loss {:.4} acc {:.3}, holdout loss {:.4} acc {:.3}",
            stats.train_loss, stats.train_accuracy, stats.holdout_loss, stats.holdout_accuracy
        );
        epochs.push(stats);
    }
    let (final_train_loss, _) = evaluate(&model, &train)?;
    let report = TrainReport {
        train_pairs: train.len(),
        holdout_pairs: holdout.len(),
        holdout_walks,
        initial_train_loss,
        initial_holdout_accuracy,
        final_train_loss,
        epochs,
    };
    Ok((model, report))
}
