use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use rand::Rng;

use super::rewards::{oracle_reward, DenseTracker, OracleState, SelfSupervisedRewards};
use super::trace::{EpisodeTrace, GoalRecord, Phase, StepRecord};
use super::{RewardConfig, RlError};
use crate::env::{render, step, MazeMap, Observation, Pose};
use crate::memory::{observe, ExplorationGraph, MemoryBuffer, MemoryEntry, MemoryStep};
use crate::policy::{
    dropout_mask, sample_action, HeadKind, MemoryBatch, Percepts, PolicyBatch, PolicyNet,
    PolicyOutput,
};
use crate::reachability::{Comparator, Embedding, FrozenReachability};
use crate::seeding::stream_rng;

/// Buffer and graph of one episode, fed one observation at a time.
#[derive(Clone, Debug)]
pub(crate) struct MemoryPipeline {
    pub buffer: MemoryBuffer,
    pub graph: ExplorationGraph,
}

impl MemoryPipeline {
    pub fn new(tau: f64) -> Result<Self, RlError> {
        Ok(Self {
            buffer: MemoryBuffer::new(tau)?,
            graph: ExplorationGraph::new(),
        })
    }

    pub fn observe(
        &mut self,
        frozen: &mut FrozenReachability,
        obs: &Observation,
        t: usize,
    ) -> Result<(Embedding, MemoryStep), RlError> {
        let e = frozen.embed(obs)?;
        let step = observe(frozen, &mut self.buffer, &mut self.graph, e.clone(), t)?;
        Ok((e, step))
    }

    /// Hops from the current anchor to `entry`, `None` when unreachable.
    pub fn distance_to(&self, entry: usize) -> Result<Option<u32>, RlError> {
        let anchor = self
            .graph
            .anchor()
            .expect("an observation has been processed");
        Ok(self.graph.shortest_path_len(anchor, entry)?)
    }
}

/// The current goal of a navigation phase.
#[derive(Clone, Debug)]
pub(crate) struct NavState {
    pub entry: usize,
    goal: Embedding,
    dense: DenseTracker,
}

impl NavState {
    pub fn new(
        pipe: &MemoryPipeline,
        _frozen: &mut FrozenReachability,
        entry: usize,
    ) -> Result<Self, RlError> {
        let goal = pipe.buffer.get(entry)?.embedding.clone();
        let mut dense = DenseTracker::new();
        dense.reward(pipe.distance_to(entry)?);
        Ok(Self { entry, goal, dense })
    }

    /// Self-supervised reward for reaching the observation embedded as `e`; `(reward, success)`.
    pub fn reward(
        &mut self,
        rewards: &SelfSupervisedRewards,
        pipe: &MemoryPipeline,
        frozen: &mut FrozenReachability,
        e: &Embedding,
    ) -> Result<(f64, bool), RlError> {
        let score = frozen.score(e, &self.goal);
        let l = pipe.distance_to(self.entry)?;
        Ok(rewards.navigation(score, &mut self.dense, l))
    }
}

/// CNN features per observation for one frozen parameter snapshot, keyed by
/// the reachability intern key of the worker's [`FrozenReachability`].
#[derive(Clone, Debug, Default)]
pub struct FeatureCache {
    features: HashMap<u32, Arc<[f64]>>,
}

impl FeatureCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clear(&mut self) {
        self.features.clear();
    }

    pub fn get(
        &mut self,
        net: &PolicyNet<f64>,
        key: u32,
        obs: &Observation,
    ) -> Result<Arc<[f64]>, RlError> {
        if let Some(f) = self.features.get(&key) {
            return Ok(f.clone());
        }
        let f: Arc<[f64]> = net.cnn_features(&[obs])?.into();
        self.features.insert(key, f.clone());
        Ok(f)
    }
}

/// Memory of one query: the first `visible` entries with their ages at time `t`.
pub(crate) fn memory_for(entries: &[MemoryEntry], visible: usize, t: usize) -> MemoryBatch {
    let mut m = MemoryBatch::new();
    let base = m.add_entries(entries[..visible].iter().map(|e| &e.embedding.vector[..]));
    m.push_query(
        entries[..visible]
            .iter()
            .enumerate()
            .map(|(j, e)| (base + j, t - e.insert_step)),
    );
    m
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn act(
    net: &PolicyNet<f64>,
    kind: HeadKind,
    features: &[f64],
    goal: Option<&[f64]>,
    entries: &[MemoryEntry],
    visible: usize,
    t: usize,
    dropout: Option<&[f64]>,
) -> Result<PolicyOutput, RlError> {
    let memory = memory_for(entries, visible, t);
    let batch = PolicyBatch {
        obs: Percepts::Features(features),
        goals: goal.map(Percepts::Features),
        memory: &memory,
        dropout,
    };
    Ok(net.forward(kind, &batch)?.pop().expect("one query"))
}

/// Everything an episode runner needs besides the networks.
#[derive(Clone, Copy, Debug)]
pub struct EpisodeSetup<'a> {
    pub map: &'a MazeMap,
    pub rays: usize,
    pub reward: RewardConfig,
    /// Exploration steps.
    pub steps: usize,
    /// Navigation steps (navigation episodes only).
    pub nav_steps: usize,
    /// Dropout on the trained head; the frozen explorer of a navigation episode uses none.
    pub dropout: f64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub(crate) struct Episode<'a> {
    setup: EpisodeSetup<'a>,
    pipe: MemoryPipeline,
    pub pose: Pose,
    obs: Observation,
    emb: Embedding,
    /// Buffer length before `obs` was processed.
    visible: usize,
    t: usize,
    pub records: Vec<StepRecord>,
    entry_observations: Vec<Observation>,
    entry_poses: Vec<Pose>,
    cells: HashSet<(usize, usize)>,
}

impl<'a> Episode<'a> {
    pub fn start(
        setup: EpisodeSetup<'a>,
        frozen: &mut FrozenReachability,
    ) -> Result<Self, RlError> {
        let pose = setup.map.start_pose();
        let obs = render(setup.map, &pose, setup.rays);
        let mut pipe = MemoryPipeline::new(setup.reward.tau)?;
        let (emb, _) = pipe.observe(frozen, &obs, 0)?;
        Ok(Self {
            setup,
            pipe,
            pose,
            entry_observations: vec![obs.clone()],
            entry_poses: vec![pose],
            obs,
            emb,
            visible: 0,
            t: 0,
            records: Vec::new(),
            cells: HashSet::from([pose.cell()]),
        })
    }

    /// Samples an action for the current observation and applies it. Returns the
    /// partially filled record, the new embedding and its memory step.
    #[allow(clippy::too_many_arguments)]
    pub fn advance<R: Rng>(
        &mut self,
        net: &PolicyNet<f64>,
        kind: HeadKind,
        phase: Phase,
        goal: Option<(usize, &[f64])>,
        dropout: f64,
        frozen: &mut FrozenReachability,
        cache: &mut FeatureCache,
        rng: &mut R,
    ) -> Result<(StepRecord, Embedding, MemoryStep), RlError> {
        let features = cache.get(net, self.emb.key, &self.obs)?;
        let mask = (dropout > 0.0).then(|| dropout_mask(dropout, rng));
        let out = act(
            net,
            kind,
            &features,
            goal.map(|g| g.1),
            self.pipe.buffer.entries(),
            self.visible,
            self.t,
            mask.as_deref(),
        )?;
        let sample = sample_action(&out, rng)?;
        let next_pose = step(self.setup.map, self.pose, sample.action);
        let next_obs = render(self.setup.map, &next_pose, self.setup.rays);
        let before = self.pipe.buffer.len();
        let (e, mstep) = self.pipe.observe(frozen, &next_obs, self.t + 1)?;
        if mstep.inserted {
            self.entry_observations.push(next_obs.clone());
            self.entry_poses.push(next_pose);
        }
        self.cells.insert(next_pose.cell());
        let record = StepRecord {
            phase,
            t: self.t,
            observation: std::mem::replace(&mut self.obs, next_obs),
            memory_len: self.visible,
            goal: goal.map(|g| g.0),
            action: sample.action,
            log_prob: sample.log_prob,
            value: out.value,
            dropout: mask.unwrap_or_default(),
            reward: 0.0,
            inserted: mstep.inserted,
            novelty: mstep.score,
            anchor: mstep.anchor,
            success: false,
            pose: self.pose,
        };
        self.pose = next_pose;
        self.emb = e.clone();
        self.visible = before;
        self.t += 1;
        Ok((record, e, mstep))
    }

    /// Moves the agent to `pose` without an action. The memory keeps its
    /// entries; the graph forgets its anchor so no edge spans the jump.
    pub fn teleport(&mut self, pose: Pose, frozen: &mut FrozenReachability) -> Result<(), RlError> {
        let obs = render(self.setup.map, &pose, self.setup.rays);
        self.pipe.graph.clear_anchor();
        self.t += 1;
        let before = self.pipe.buffer.len();
        let (e, step) = self.pipe.observe(frozen, &obs, self.t)?;
        if step.inserted {
            self.entry_observations.push(obs.clone());
            self.entry_poses.push(pose);
        }
        self.cells.insert(pose.cell());
        self.pose = pose;
        self.obs = obs;
        self.emb = e;
        self.visible = before;
        Ok(())
    }

    fn finish(self, goals: Vec<GoalRecord>) -> EpisodeTrace {
        EpisodeTrace {
            seed: self.setup.seed,
            mode: self.setup.reward.mode,
            records: self.records,
            final_observation: self.obs,
            final_pose: self.pose,
            entries: self.pipe.buffer.entries().to_vec(),
            entry_observations: self.entry_observations,
            entry_poses: self.entry_poses,
            edges: self.pipe.graph.edges().to_vec(),
            goals,
            coverage: self.cells.len(),
        }
    }
}

/// One exploration episode with the exploration head, rewarded by `setup.reward.mode`.
pub fn run_exploration(
    setup: EpisodeSetup<'_>,
    net: &PolicyNet<f64>,
    frozen: &mut FrozenReachability,
    cache: &mut FeatureCache,
) -> Result<EpisodeTrace, RlError> {
    let mode = setup.reward.mode;
    if !mode.is_exploration() {
        return Err(RlError::ModeMismatch {
            mode,
            reason: "not an exploration reward",
        });
    }
    let rewards = (!mode.is_oracle())
        .then(|| SelfSupervisedRewards::new(setup.reward))
        .transpose()?;
    let mut rng = stream_rng(setup.seed, 0);
    let mut ep = Episode::start(setup, frozen)?;
    let mut oracle = OracleState::new(&ep.pose);
    for _ in 0..setup.steps {
        let (mut rec, _, mstep) = ep.advance(
            net,
            HeadKind::Explore,
            Phase::Explore,
            None,
            setup.dropout,
            frozen,
            cache,
            &mut rng,
        )?;
        rec.reward = match &rewards {
            Some(r) => r.exploration(&mstep),
            None => oracle_reward(mode, &mut oracle, &ep.pose, None)?,
        };
        ep.records.push(rec);
    }
    Ok(ep.finish(Vec::new()))
}

/// Exploration phase with the (frozen) exploration head, then a navigation
/// phase towards goals drawn uniformly from the buffer, rewarded by
/// `setup.reward.mode`. A goal is replaced as soon as it is reached.
pub fn run_navigation(
    setup: EpisodeSetup<'_>,
    net: &PolicyNet<f64>,
    frozen: &mut FrozenReachability,
    cache: &mut FeatureCache,
) -> Result<EpisodeTrace, RlError> {
    let mode = setup.reward.mode;
    if mode.is_exploration() {
        return Err(RlError::ModeMismatch {
            mode,
            reason: "not a navigation reward",
        });
    }
    let rewards = (!mode.is_oracle())
        .then(|| SelfSupervisedRewards::new(setup.reward))
        .transpose()?;
    let mut rng = stream_rng(setup.seed, 0);
    let mut goal_rng = stream_rng(setup.seed, 1);
    let mut ep = Episode::start(setup, frozen)?;
    for _ in 0..setup.steps {
        let (rec, _, _) = ep.advance(
            net,
            HeadKind::Explore,
            Phase::Explore,
            None,
            0.0,
            frozen,
            cache,
            &mut rng,
        )?;
        ep.records.push(rec);
    }
    if ep.pipe.buffer.is_empty() {
        return Err(RlError::EmptyBufferAfterExploration);
    }
    let mut goals: Vec<GoalRecord> = Vec::new();
    let mut oracle = OracleState::new(&ep.pose);
    let mut nav: Option<NavState> = None;
    for _ in 0..setup.nav_steps {
        let state = match nav.as_mut() {
            Some(n) => n,
            None => {
                let entry = goal_rng.gen_range(0..ep.pipe.buffer.len());
                goals.push(GoalRecord {
                    entry,
                    start: ep.records.len(),
                    observation: ep.entry_observations[entry].clone(),
                    pose: ep.entry_poses[entry],
                });
                nav.insert(NavState::new(&ep.pipe, frozen, entry)?)
            }
        };
        let g = goals.len() - 1;
        let goal_obs = goals[g].observation.clone();
        let goal_key = ep.pipe.buffer.get(state.entry)?.embedding.key;
        let goal_features = cache.get(net, goal_key, &goal_obs)?;
        let (mut rec, e, _) = ep.advance(
            net,
            HeadKind::Navigate,
            Phase::Navigate,
            Some((g, &goal_features)),
            setup.dropout,
            frozen,
            cache,
            &mut rng,
        )?;
        let (reward, success) = match &rewards {
            Some(r) => state.reward(r, &ep.pipe, frozen, &e)?,
            None => {
                let r = oracle_reward(mode, &mut oracle, &ep.pose, Some(&goals[g].pose))?;
                (r, r > 0.0)
            }
        };
        rec.reward = reward;
        rec.success = success;
        ep.records.push(rec);
        if success {
            nav = None;
        }
    }
    Ok(ep.finish(goals))
}
