//! Stage 1: random-walk data, temporally labelled pairs and the siamese
//! reachability network `R(a, b) = f(g(a), g(b))`.

mod dataset;
mod frozen;
mod model;
mod train;

use rand::distributions::{Distribution, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{render, step, Action, MazeMap, Observation, Pose};
use crate::seeding::stream_rng;

pub use dataset::{read_pairs, write_pairs};
pub use frozen::{Comparator, Embedding, FrozenReachability};
pub use model::{observation_batch, ReachabilityModel, EMBEDDING_DIM, HIDDEN_DIM};
pub use train::{train_model, train_reachability, EpochStats, Precision, TrainConfig, TrainReport};

#[derive(Debug, thiserror::Error)]
pub enum ReachabilityError {
    #[error("walks of {steps} steps are too short for a negative margin of {margin}")]
    InsufficientWalkLength { steps: usize, margin: usize },
    #[error("invalid pairing config: {0}")]
    InvalidConfig(String),
    #[error("no pairs to train on")]
    NoPairs,
    #[error("pair dataset: {0}")]
    Dataset(String),
    #[error(transparent)]
    Autodiff(#[from] crate::autodiff::AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PairingConfig {
    /// Observations per walk.
    pub walk_steps: usize,
    pub walks: usize,
    pub pairs_per_walk: usize,
    /// Largest step gap labelled positive.
    pub positive_radius: usize,
    /// Smallest step gap labelled negative (gaps in between are never sampled).
    pub negative_margin: usize,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            walk_steps: 2000,
            walks: 40,
            pairs_per_walk: 2500,
            positive_radius: 5,
            negative_margin: 25,
        }
    }
}

impl PairingConfig {
    pub fn validate(&self) -> Result<(), ReachabilityError> {
        if self.positive_radius == 0 {
            return Err(ReachabilityError::InvalidConfig(
                "positive_radius must be at least 1".into(),
            ));
        }
        if self.negative_margin < self.positive_radius {
            return Err(ReachabilityError::InvalidConfig(
                "negative_margin must be at least positive_radius".into(),
            ));
        }
        Ok(())
    }

    /// Smallest negative gap; a margin equal to `k` labels every gap above `k` negative.
    pub fn min_negative_gap(&self) -> usize {
        self.negative_margin.max(self.positive_radius + 1)
    }
}

/// One random walk: `observations[i]` is rendered at `poses[i]`, after `i` actions.
///
/// Poses are logged for oracles and display only.
#[derive(Clone, Debug, PartialEq)]
pub struct Walk {
    pub observations: Vec<Observation>,
    pub poses: Vec<Pose>,
}

impl Walk {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledPair {
    pub obs_a: Observation,
    pub obs_b: Observation,
    pub label: u8,
    /// Index of the walk both observations come from.
    pub walk: usize,
    /// Step indices of the two observations within the walk.
    pub steps: (usize, usize),
}

/// Uniform-random walks of `walk_steps` observations from the start pose.
///
/// Walk `w` draws from its own stream of `seed`, so walks are independent of
/// each other and of how many are collected.
pub fn collect_walks(map: &MazeMap, cfg: &PairingConfig, rays: usize, seed: u64) -> Vec<Walk> {
    (0..cfg.walks)
        .map(|w| collect_walk(map, cfg.walk_steps, rays, seed, w as u64))
        .collect()
}

fn collect_walk(map: &MazeMap, steps: usize, rays: usize, seed: u64, stream: u64) -> Walk {
    let mut rng = stream_rng(seed, stream);
    let mut pose = map.start_pose();
    let mut observations = Vec::with_capacity(steps);
    let mut poses = Vec::with_capacity(steps);
    for i in 0..steps {
        if i > 0 {
            pose = step(map, pose, Action::ALL[rng.gen_range(0..Action::COUNT)]);
        }
        observations.push(render(map, &pose, rays));
        poses.push(pose);
    }
    Walk {
        observations,
        poses,
    }
}

/// 1 iff the two step indices are at most `k` apart.
pub fn pair_label(i: usize, j: usize, k: usize) -> u8 {
    u8::from(i.abs_diff(j) <= k)
}

/// Index pairs `(i, j, label)` within one walk of `len` observations.
///
/// Even draws are positive (`|i − j| ≤ k`), odd draws negative
/// (`|i − j| ≥ margin`); gaps are weighted by how many index pairs have them,
/// so pairs are uniform within each class.
pub fn sample_index_pairs<R: Rng>(
    len: usize,
    count: usize,
    first_label_positive: bool,
    cfg: &PairingConfig,
    rng: &mut R,
) -> Result<Vec<(usize, usize, u8)>, ReachabilityError> {
    cfg.validate()?;
    let margin = cfg.min_negative_gap();
    if len < margin + 1 {
        return Err(ReachabilityError::InsufficientWalkLength { steps: len, margin });
    }
    let k = cfg.positive_radius.min(len - 1);
    let positive_gaps = WeightedIndex::new((0..=k).map(|d| len - d)).expect("nonempty weights");
    let negative_gaps =
        WeightedIndex::new((margin..len).map(|d| len - d)).expect("nonempty weights");
    let mut out = Vec::with_capacity(count);
    for n in 0..count {
        let positive = (n % 2 == 0) == first_label_positive;
        let gap = if positive {
            positive_gaps.sample(rng)
        } else {
            margin + negative_gaps.sample(rng)
        };
        let i = rng.gen_range(0..len - gap);
        let (a, b) = if rng.gen_bool(0.5) {
            (i, i + gap)
        } else {
            (i + gap, i)
        };
        let label = pair_label(a, b, cfg.positive_radius);
        debug_assert_eq!(label == 1, positive);
        out.push((a, b, label));
    }
    Ok(out)
}

/// Balanced labelled pairs, `pairs_per_walk` from each walk.
///
/// Labels alternate over the global pair index, so any even total is split
/// exactly in half.
pub fn sample_pairs(
    walks: &[Walk],
    cfg: &PairingConfig,
    seed: u64,
) -> Result<Vec<LabeledPair>, ReachabilityError> {
    let mut pairs = Vec::with_capacity(walks.len() * cfg.pairs_per_walk);
    for (w, walk) in walks.iter().enumerate() {
        let mut rng = stream_rng(seed, w as u64);
        let first_positive = (w * cfg.pairs_per_walk).is_multiple_of(2);
        for (i, j, label) in sample_index_pairs(
            walk.len(),
            cfg.pairs_per_walk,
            first_positive,
            cfg,
            &mut rng,
        )? {
            pairs.push(LabeledPair {
                obs_a: walk.observations[i].clone(),
                obs_b: walk.observations[j].clone(),
                label,
                walk: w,
                steps: (i, j),
            });
        }
    }
    Ok(pairs)
}
