use serde::{Deserialize, Serialize};

use super::rewards::SelfSupervisedRewards;
use super::rollout::{MemoryPipeline, NavState};
use super::{RewardConfig, RewardMode, RlError};
use crate::env::{Action, Observation, Pose};
use crate::memory::{MemoryBuffer, MemoryEntry, MemoryStep};
use crate::reachability::FrozenReachability;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Explore,
    Navigate,
}

/// One action taken by the agent.
///
/// At episode time `t` the policy sees `observation` (`x_t`) and the first
/// `memory_len` buffer entries (`M_{t-1}`); the remaining fields describe the
/// action and what the memory did with the observation it led to (`x_{t+1}`).
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub phase: Phase,
    pub t: usize,
    pub observation: Observation,
    pub memory_len: usize,
    /// Index into [`EpisodeTrace::goals`] during navigation.
    pub goal: Option<usize>,
    pub action: Action,
    pub log_prob: f64,
    pub value: f64,
    /// Dropout mask applied to `h` (empty when none was used).
    pub dropout: Vec<f64>,
    pub reward: f64,
    pub inserted: bool,
    pub novelty: f64,
    pub anchor: usize,
    /// The goal was reached and a new one sampled.
    pub success: bool,
    /// Simulator pose of `x_t`. Logged for evaluation and plots only.
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoalRecord {
    /// Buffer entry whose stored observation is the goal.
    pub entry: usize,
    /// Index of the first record that pursues this goal.
    pub start: usize,
    pub observation: Observation,
    /// Display only.
    pub pose: Pose,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeTrace {
    pub seed: u64,
    pub mode: RewardMode,
    pub records: Vec<StepRecord>,
    /// `x_T`, reached by the last action.
    pub final_observation: Observation,
    pub final_pose: Pose,
    pub entries: Vec<MemoryEntry>,
    pub entry_observations: Vec<Observation>,
    /// Display only.
    pub entry_poses: Vec<Pose>,
    pub edges: Vec<(usize, usize)>,
    pub goals: Vec<GoalRecord>,
    /// Distinct cells visited, `x_0` included.
    pub coverage: usize,
}

impl EpisodeTrace {
    pub fn total_reward(&self) -> f64 {
        self.records.iter().map(|r| r.reward).sum()
    }

    /// Records of one phase.
    pub fn phase(&self, phase: Phase) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().filter(move |r| r.phase == phase)
    }

    /// Observations `x_0 … x_T` in order.
    pub fn observations(&self) -> impl Iterator<Item = &Observation> {
        self.records
            .iter()
            .map(|r| &r.observation)
            .chain(std::iter::once(&self.final_observation))
    }

    pub fn insertions(&self) -> usize {
        self.records.iter().filter(|r| r.inserted).count()
    }

    /// Copy with every pose replaced by the origin.
    pub fn without_poses(&self) -> Self {
        let zero = Pose::new(0, 0, crate::env::Heading::East);
        let mut t = self.clone();
        t.final_pose = zero;
        t.records.iter_mut().for_each(|r| r.pose = zero);
        t.entry_poses.iter_mut().for_each(|p| *p = zero);
        t.goals.iter_mut().for_each(|g| g.pose = zero);
        t
    }
}

/// Rebuilds the buffer from the trace's observations alone, returning it with
/// the memory step of every observation `x_0 … x_T`.
pub fn replay_buffer(
    trace: &EpisodeTrace,
    frozen: &mut FrozenReachability,
    tau: f64,
) -> Result<(MemoryBuffer, Vec<MemoryStep>), RlError> {
    let mut pipe = MemoryPipeline::new(tau)?;
    let mut steps = Vec::with_capacity(trace.records.len() + 1);
    for (t, obs) in trace.observations().enumerate() {
        steps.push(pipe.observe(frozen, obs, t)?.1);
    }
    Ok((pipe.buffer, steps))
}

/// Recomputes the rewards of a self-supervised trace from its observations and
/// goal choices only. Exploration-phase records of a navigation episode earn 0.
pub fn replay_rewards(
    trace: &EpisodeTrace,
    frozen: &mut FrozenReachability,
    cfg: RewardConfig,
) -> Result<Vec<f64>, RlError> {
    let rewards = SelfSupervisedRewards::new(cfg)?;
    let mut pipe = MemoryPipeline::new(cfg.tau)?;
    let mut obs = trace.observations();
    pipe.observe(frozen, obs.next().expect("x_0"), 0)?;
    let mut nav: Option<NavState> = None;
    let mut out = Vec::with_capacity(trace.records.len());
    for (i, (rec, next)) in trace.records.iter().zip(obs).enumerate() {
        if let Some(g) = trace.goals.iter().find(|g| g.start == i) {
            nav = Some(NavState::new(&pipe, frozen, g.entry)?);
        }
        let (e, step) = pipe.observe(frozen, next, rec.t + 1)?;
        let r = match (rec.phase, nav.as_mut()) {
            (Phase::Explore, _) if cfg.mode.is_exploration() => rewards.exploration(&step),
            (Phase::Explore, _) => 0.0,
            (Phase::Navigate, Some(n)) => n.reward(&rewards, &pipe, frozen, &e)?.0,
            (Phase::Navigate, None) => {
                return Err(RlError::InvalidConfig(
                    "navigation record without a goal".into(),
                ))
            }
        };
        out.push(r);
    }
    Ok(out)
}
