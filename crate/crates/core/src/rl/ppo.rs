use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::Rng;

use super::trace::{EpisodeTrace, StepRecord};
use super::{PpoConfig, RlError};
use crate::autodiff::{Graph, OptimizerState, ParamId, Tensor};
use crate::env::Observation;
use crate::policy::{
    log_softmax, HeadKind, MemoryBatch, Percepts, PolicyBatch, PolicyNet, FEATURE_DIM,
};

/// One record scheduled for optimization, with its advantage and value target.
#[derive(Clone, Copy, Debug)]
pub struct TrainStep<'a> {
    /// Index of the owning trace.
    pub trace: usize,
    pub record: &'a StepRecord,
    pub advantage: f64,
    pub ret: f64,
}

/// Averages over every minibatch of one update.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PpoStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
    /// Optimizer steps taken.
    pub updates: usize,
}

/// Clipped surrogate `min(ρ·A, clip(ρ, 1 − ε, 1 + ε)·A)`.
pub fn surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// CNN features computed once for every observation the update touches.
struct FrozenFeatures {
    steps: Vec<f64>,
    goals: HashMap<(usize, usize), usize>,
    goal_rows: Vec<f64>,
}

impl FrozenFeatures {
    const CHUNK: usize = 256;

    fn new(
        net: &PolicyNet<f64>,
        traces: &[EpisodeTrace],
        steps: &[TrainStep<'_>],
        kind: HeadKind,
    ) -> Result<Self, RlError> {
        let mut out = Self {
            steps: Vec::with_capacity(steps.len() * FEATURE_DIM),
            goals: HashMap::new(),
            goal_rows: Vec::new(),
        };
        let obs: Vec<&Observation> = steps.iter().map(|s| &s.record.observation).collect();
        for chunk in obs.chunks(Self::CHUNK) {
            out.steps.extend(net.cnn_features(chunk)?);
        }
        if kind == HeadKind::Navigate {
            let mut goal_obs = Vec::new();
            for s in steps {
                if let Some(g) = s.record.goal {
                    let next = out.goals.len();
                    out.goals.entry((s.trace, g)).or_insert_with(|| {
                        goal_obs.push(&traces[s.trace].goals[g].observation);
                        next
                    });
                }
            }
            for chunk in goal_obs.chunks(Self::CHUNK) {
                out.goal_rows.extend(net.cnn_features(chunk)?);
            }
        }
        Ok(out)
    }
}

fn goal_observation<'t>(
    traces: &'t [EpisodeTrace],
    s: &TrainStep<'_>,
) -> Result<&'t Observation, RlError> {
    let g = s
        .record
        .goal
        .ok_or_else(|| RlError::InvalidConfig("navigation step without a goal".into()))?;
    Ok(&traces[s.trace].goals[g].observation)
}

/// Memory rows of a minibatch; each trace's entries are stored once.
fn minibatch_memory(traces: &[EpisodeTrace], steps: &[&TrainStep<'_>]) -> MemoryBatch {
    let mut memory = MemoryBatch::new();
    let mut bases: HashMap<usize, usize> = HashMap::new();
    for s in steps {
        let entries = &traces[s.trace].entries;
        let base = *bases
            .entry(s.trace)
            .or_insert_with(|| memory.add_entries(entries.iter().map(|e| &e.embedding.vector[..])));
        let t = s.record.t;
        memory.push_query(
            entries[..s.record.memory_len]
                .iter()
                .enumerate()
                .map(|(j, e)| (base + j, t - e.insert_step)),
        );
    }
    memory
}

/// Several epochs of clipped PPO over `steps` on the parameters `params`.
///
/// `train_cnn = false` feeds precomputed CNN features so no CNN gradient is
/// formed. Each optimizer step updates only those listed parameters that
/// received a gradient.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<R: Rng>(
    net: &mut PolicyNet<f64>,
    kind: HeadKind,
    traces: &[EpisodeTrace],
    steps: &[TrainStep<'_>],
    cfg: &PpoConfig,
    opt: &mut OptimizerState<f64>,
    params: &[ParamId],
    train_cnn: bool,
    rng: &mut R,
) -> Result<PpoStats, RlError> {
    let mut stats = PpoStats::default();
    if steps.is_empty() {
        return Ok(stats);
    }
    let frozen = if train_cnn {
        None
    } else {
        Some(FrozenFeatures::new(net, traces, steps, kind)?)
    };
    let mut order: Vec<usize> = (0..steps.len()).collect();
    let mut batches = 0usize;
    for _ in 0..cfg.ppo_epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch) {
            let mb = minibatch(net, kind, traces, steps, chunk, frozen.as_ref(), cfg)?;
            stats.policy_loss += mb.policy_loss;
            stats.value_loss += mb.value_loss;
            stats.entropy += mb.entropy;
            stats.clip_fraction += mb.clip_fraction;
            batches += 1;
            let live: Vec<ParamId> = params
                .iter()
                .copied()
                .filter(|&id| net.store.grad(id).is_some())
                .collect();
            opt.step(&mut net.store, &live)?;
            net.store.zero_grads();
            stats.updates += 1;
        }
    }
    let n = batches as f64;
    stats.policy_loss /= n;
    stats.value_loss /= n;
    stats.entropy /= n;
    stats.clip_fraction /= n;
    Ok(stats)
}

struct MinibatchLoss {
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    clip_fraction: f64,
}

/// Forward and backward pass of one minibatch; gradients land in `net.store`.
fn minibatch(
    net: &mut PolicyNet<f64>,
    kind: HeadKind,
    traces: &[EpisodeTrace],
    steps: &[TrainStep<'_>],
    chunk: &[usize],
    frozen: Option<&FrozenFeatures>,
    cfg: &PpoConfig,
) -> Result<MinibatchLoss, RlError> {
    let picked: Vec<&TrainStep<'_>> = chunk.iter().map(|&i| &steps[i]).collect();
    let n = picked.len();
    let memory = minibatch_memory(traces, &picked);

    let (obs_rows, goal_rows) = match frozen {
        Some(f) => {
            let obs: Vec<f64> = chunk
                .iter()
                .flat_map(|&i| {
                    f.steps[i * FEATURE_DIM..(i + 1) * FEATURE_DIM]
                        .iter()
                        .copied()
                })
                .collect();
            let goals = if kind == HeadKind::Navigate {
                let mut rows = Vec::with_capacity(n * FEATURE_DIM);
                for s in &picked {
                    let g = s.record.goal.ok_or_else(|| {
                        RlError::InvalidConfig("navigation step without a goal".into())
                    })?;
                    let r = f.goals[&(s.trace, g)];
                    rows.extend_from_slice(&f.goal_rows[r * FEATURE_DIM..(r + 1) * FEATURE_DIM]);
                }
                Some(rows)
            } else {
                None
            };
            (Some(obs), goals)
        }
        None => (None, None),
    };
    let obs = match &obs_rows {
        Some(rows) => Percepts::Features(rows),
        None => Percepts::Raw(picked.iter().map(|s| &s.record.observation).collect()),
    };
    let goals = match (kind, &goal_rows) {
        (HeadKind::Explore, _) => None,
        (HeadKind::Navigate, Some(rows)) => Some(Percepts::Features(rows)),
        (HeadKind::Navigate, None) => Some(Percepts::Raw(
            picked
                .iter()
                .map(|s| goal_observation(traces, s))
                .collect::<Result<_, _>>()?,
        )),
    };
    let dropout: Option<Vec<f64>> =
        picked
            .iter()
            .any(|s| !s.record.dropout.is_empty())
            .then(|| {
                picked
                    .iter()
                    .flat_map(|s| {
                        if s.record.dropout.is_empty() {
                            vec![1.0; FEATURE_DIM]
                        } else {
                            s.record.dropout.clone()
                        }
                    })
                    .collect()
            });
    let batch = PolicyBatch {
        obs,
        goals,
        memory: &memory,
        dropout: dropout.as_deref(),
    };

    let mut g = Graph::new();
    let vars = net.forward_graph(&mut g, kind, &batch)?;
    let out = g.concat(vars.logits, vars.value)?;

    let adv: Vec<f64> = picked.iter().map(|s| s.advantage).collect();
    let adv = if cfg.normalize_advantages && n > 1 {
        let mean = adv.iter().sum::<f64>() / n as f64;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        adv.iter().map(|a| (a - mean) / (std + 1e-8)).collect()
    } else {
        adv
    };

    let values = g.value(out).values();
    let inv = 1.0 / n as f64;
    let mut upstream = vec![0.0; n * 4];
    let mut loss = MinibatchLoss {
        policy_loss: 0.0,
        value_loss: 0.0,
        entropy: 0.0,
        clip_fraction: 0.0,
    };
    for (i, s) in picked.iter().enumerate() {
        let row = &values[i * 4..(i + 1) * 4];
        let (p, log_p) = log_softmax(&row[..3])?;
        let h: f64 = -p
            .iter()
            .zip(&log_p)
            .map(|(p, l)| if *p > 0.0 { p * l } else { 0.0 })
            .sum::<f64>();
        let a = s.record.action.index();
        let ratio = (log_p[a] - s.record.log_prob).exp();
        let sur = surrogate(ratio, adv[i], cfg.clip);
        let v_err = row[3] - s.ret;
        loss.policy_loss -= sur * inv;
        loss.value_loss += v_err * v_err * inv;
        loss.entropy += h * inv;
        if (ratio - 1.0).abs() > cfg.clip {
            loss.clip_fraction += inv;
        }
        // d(-surrogate)/d log π(a): the unclipped branch is the minimum.
        let d_logp = if ratio * adv[i] <= ratio.clamp(1.0 - cfg.clip, 1.0 + cfg.clip) * adv[i] {
            -ratio * adv[i]
        } else {
            0.0
        };
        for j in 0..3 {
            let onehot = if j == a { 1.0 } else { 0.0 };
            let ent = if p[j] > 0.0 {
                cfg.entropy_coef * p[j] * (log_p[j] + h)
            } else {
                0.0
            };
            upstream[i * 4 + j] = (d_logp * (onehot - p[j]) + ent) * inv;
        }
        upstream[i * 4 + 3] = 2.0 * cfg.value_coef * v_err * inv;
    }
    let total =
        loss.policy_loss + cfg.value_coef * loss.value_loss - cfg.entropy_coef * loss.entropy;
    if !total.is_finite() || upstream.iter().any(|u| !u.is_finite()) {
        return Err(RlError::NonFiniteLoss(format!(
            "policy {} value {} entropy {}",
            loss.policy_loss, loss.value_loss, loss.entropy
        )));
    }
    let grads = g.backward(out, &Tensor::new(vec![n, 4], upstream)?)?;
    net.store.accumulate(grads);
    Ok(loss)
}
