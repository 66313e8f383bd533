use std::collections::HashSet;

use super::{RewardConfig, RewardMode, RlError};
use crate::env::Pose;
use crate::memory::MemoryStep;
use crate::reachability::{Comparator, Embedding};

/// Reward of the pose-supervised navigation baseline on reaching the goal cell.
pub const ORACLE_GOAL_REWARD: f64 = 10.0;

/// `α` if the observation was stored in the buffer, else 0.
pub fn curiosity_reward(inserted: bool, alpha: f64) -> f64 {
    if inserted {
        alpha
    } else {
        0.0
    }
}

/// `α · (β − s)`; the empty-buffer sentinel `s = −∞` counts as `s = 0`.
pub fn curiosity_reward_continuous(score: f64, alpha: f64, beta: f64) -> f64 {
    let s = if score == f64::NEG_INFINITY {
        0.0
    } else {
        score
    };
    alpha * (beta - s)
}

/// `β` iff `R(x, goal) > τ` (strict).
pub fn sparse_nav_reward<C: Comparator + ?Sized>(
    cmp: &mut C,
    obs: &Embedding,
    goal: &Embedding,
    beta: f64,
    tau: f64,
) -> f64 {
    success_reward(cmp.score(obs, goal), beta, tau)
}

pub(crate) fn success_reward(score: f64, beta: f64, tau: f64) -> f64 {
    if score > tau {
        beta
    } else {
        0.0
    }
}

/// `max(0, min_{t' < t} l_{t'} − l_t)` over graph distances to the goal entry.
///
/// Unreachable values (`None`) are left out of the running minimum and earn 0,
/// as does the first step.
pub fn dense_nav_reward(history: &[Option<u32>], l_t: Option<u32>) -> f64 {
    match (history.iter().flatten().min(), l_t) {
        (Some(&best), Some(l)) => f64::from(best.saturating_sub(l)),
        _ => 0.0,
    }
}

/// Incremental form of [`dense_nav_reward`] for one goal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct DenseTracker {
    best: Option<u32>,
}

impl DenseTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn best(&self) -> Option<u32> {
        self.best
    }

    /// Reward for the next distance, then folds it into the running minimum.
    pub fn reward(&mut self, l_t: Option<u32>) -> f64 {
        let r = match (self.best, l_t) {
            (Some(best), Some(l)) => f64::from(best.saturating_sub(l)),
            _ => 0.0,
        };
        if let Some(l) = l_t {
            self.best = Some(self.best.map_or(l, |b| b.min(l)));
        }
        r
    }
}

/// Reward providers of the self-supervised modes. Nothing here can see a pose.
#[derive(Clone, Copy, Debug)]
pub struct SelfSupervisedRewards {
    cfg: RewardConfig,
}

impl SelfSupervisedRewards {
    pub fn new(cfg: RewardConfig) -> Result<Self, RlError> {
        if cfg.mode.is_oracle() {
            return Err(RlError::ModeMismatch {
                mode: cfg.mode,
                reason: "oracle modes reward from poses",
            });
        }
        Ok(Self { cfg })
    }

    /// Exploration reward for the memory update of the newly reached observation.
    pub fn exploration(&self, step: &MemoryStep) -> f64 {
        match self.cfg.mode {
            RewardMode::CuriosityDiscrete => curiosity_reward(step.inserted, self.cfg.alpha),
            RewardMode::CuriosityContinuous => {
                curiosity_reward_continuous(step.score, self.cfg.alpha, self.cfg.beta)
            }
            _ => 0.0,
        }
    }

    /// Navigation reward from the goal score and the graph distance to the goal entry.
    /// Returns `(reward, success)`.
    pub fn navigation(
        &self,
        goal_score: f64,
        dense: &mut DenseTracker,
        l_t: Option<u32>,
    ) -> (f64, bool) {
        let sparse = success_reward(goal_score, self.cfg.beta, self.cfg.tau);
        let d = dense.reward(l_t);
        let r = match self.cfg.mode {
            RewardMode::NavSparse => sparse,
            RewardMode::NavSparsePlusDense => sparse + d,
            _ => 0.0,
        };
        (r, sparse > 0.0)
    }
}

/// Per-episode state of the pose-supervised baselines.
#[derive(Clone, Debug, Default)]
pub struct OracleState {
    visited: HashSet<(usize, usize)>,
}

impl OracleState {
    /// State for an episode starting at `start` (its cell counts as visited).
    pub fn new(start: &Pose) -> Self {
        Self {
            visited: HashSet::from([start.cell()]),
        }
    }

    pub fn visited_cells(&self) -> usize {
        self.visited.len()
    }
}

/// Coverage baseline: +1 on the first visit of a cell. Distance baseline:
/// [`ORACLE_GOAL_REWARD`] when the agent stands on the goal cell.
pub fn oracle_reward(
    mode: RewardMode,
    state: &mut OracleState,
    pose: &Pose,
    goal: Option<&Pose>,
) -> Result<f64, RlError> {
    match mode {
        RewardMode::OracleCoverage => Ok(if state.visited.insert(pose.cell()) {
            1.0
        } else {
            0.0
        }),
        RewardMode::OracleDistance => {
            let goal = goal.ok_or(RlError::ModeMismatch {
                mode,
                reason: "the distance baseline needs a goal pose",
            })?;
            Ok(if pose.cell() == goal.cell() {
                ORACLE_GOAL_REWARD
            } else {
                0.0
            })
        }
        _ => Err(RlError::ModeMismatch {
            mode,
            reason: "self-supervised modes never read poses",
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Heading;
    use crate::memory::tests::{emb, TableComparator};

    #[test]
    fn curiosity_examples() {
        assert_eq!(curiosity_reward(true, 1.0), 1.0);
        assert_eq!(curiosity_reward(false, 1.0), 0.0);
        assert_eq!(curiosity_reward(true, 2.5), 2.5);
        assert!((curiosity_reward_continuous(0.3, 1.0, 0.5) - 0.2).abs() < 1e-15);
        assert_eq!(curiosity_reward_continuous(0.5, 1.0, 0.5), 0.0);
        assert!((curiosity_reward_continuous(0.9, 1.0, 0.5) + 0.4).abs() < 1e-15);
        assert_eq!(
            curiosity_reward_continuous(f64::NEG_INFINITY, 2.0, 0.5),
            1.0
        );
    }

    #[test]
    fn sparse_examples() {
        let mut cmp = TableComparator::default();
        cmp.0.extend([((1, 9), 0.8), ((2, 9), 0.5), ((3, 9), 0.2)]);
        assert_eq!(
            sparse_nav_reward(&mut cmp, &emb(1), &emb(9), 10.0, 0.5),
            10.0
        );
        assert_eq!(
            sparse_nav_reward(&mut cmp, &emb(2), &emb(9), 10.0, 0.5),
            0.0
        );
        assert_eq!(
            sparse_nav_reward(&mut cmp, &emb(3), &emb(9), 10.0, 0.5),
            0.0
        );
    }

    #[test]
    fn dense_examples() {
        let ls = [5, 4, 4, 3, 5, 2].map(Some);
        let rewards: Vec<f64> = (0..ls.len())
            .map(|t| dense_nav_reward(&ls[..t], ls[t]))
            .collect();
        assert_eq!(rewards, [0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
        let mut tracker = DenseTracker::new();
        assert_eq!(ls.map(|l| tracker.reward(l)).to_vec(), rewards);
        assert_eq!(dense_nav_reward(&[Some(3)], None), 0.0);
        assert_eq!(dense_nav_reward(&[None, Some(4)], Some(2)), 2.0);
        let up = [1, 2, 3, 4].map(Some);
        assert!((0..4).all(|t| dense_nav_reward(&up[..t], up[t]) == 0.0));
    }

    #[test]
    fn oracle_modes() {
        let start = Pose::new(1, 1, Heading::East);
        let mut s = OracleState::new(&start);
        let next = Pose::new(2, 1, Heading::East);
        assert_eq!(
            oracle_reward(RewardMode::OracleCoverage, &mut s, &start, None).unwrap(),
            0.0
        );
        assert_eq!(
            oracle_reward(RewardMode::OracleCoverage, &mut s, &next, None).unwrap(),
            1.0
        );
        assert_eq!(
            oracle_reward(RewardMode::OracleCoverage, &mut s, &next, None).unwrap(),
            0.0
        );
        let goal = Pose::new(2, 1, Heading::South);
        assert_eq!(
            oracle_reward(RewardMode::OracleDistance, &mut s, &next, Some(&goal)).unwrap(),
            10.0
        );
        assert_eq!(
            oracle_reward(RewardMode::OracleDistance, &mut s, &start, Some(&goal)).unwrap(),
            0.0
        );
        for mode in [
            RewardMode::CuriosityDiscrete,
            RewardMode::CuriosityContinuous,
            RewardMode::NavSparse,
            RewardMode::NavSparsePlusDense,
        ] {
            assert!(matches!(
                oracle_reward(mode, &mut s, &next, None),
                Err(RlError::ModeMismatch { .. })
            ));
        }
        let cfg = RewardConfig {
            mode: RewardMode::OracleCoverage,
            ..RewardConfig::default()
        };
        assert!(SelfSupervisedRewards::new(cfg).is_err());
    }

    #[test]
    fn navigation_reward_combines_modes() {
        let sparse = SelfSupervisedRewards::new(RewardConfig {
            mode: RewardMode::NavSparse,
            ..Default::default()
        })
        .unwrap();
        let dense = SelfSupervisedRewards::new(RewardConfig {
            mode: RewardMode::NavSparsePlusDense,
            ..Default::default()
        })
        .unwrap();
        let (mut a, mut b) = (DenseTracker::new(), DenseTracker::new());
        assert_eq!(sparse.navigation(0.1, &mut a, Some(4)), (0.0, false));
        assert_eq!(dense.navigation(0.1, &mut b, Some(4)), (0.0, false));
        assert_eq!(sparse.navigation(0.9, &mut a, Some(1)), (10.0, true));
        assert_eq!(dense.navigation(0.9, &mut b, Some(1)), (13.0, true));
    }
}
