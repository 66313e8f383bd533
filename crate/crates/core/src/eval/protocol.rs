use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{CoverageGrid, EvalError, GoalOutcome, NavResult};
use crate::env::{render, step, Action, Heading, MazeMap, Observation, Pose};
use crate::policy::{HeadKind, PolicyNet};
use crate::reachability::FrozenReachability;
use crate::rl::{
    run_exploration, Episode, EpisodeSetup, FeatureCache, Phase, RewardConfig, RewardMode,
};
use crate::seeding::{derive_seed, stream_rng};

pub const DEFAULT_GOALS: usize = 50;
/// Goals are sampled at least this many cells from the start.
pub const MIN_GOAL_DISTANCE: u32 = 3;
/// A goal counts as reached within this many cells.
pub const SUCCESS_RADIUS: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NavGoal {
    pub pose: Pose,
    pub observation: Observation,
    /// Shortest path length from the start pose, in cells.
    pub shortest: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GoalSet {
    pub goals: Vec<NavGoal>,
}

impl GoalSet {
    /// `count` goals drawn uniformly (with replacement) over free cells at least
    /// [`MIN_GOAL_DISTANCE`] from the start, each with a uniform heading.
    pub fn sample(map: &MazeMap, rays: usize, count: usize, seed: u64) -> Result<Self, EvalError> {
        let start = map.start_pose();
        let dist = map.distances_from(start.x, start.y);
        let candidates: Vec<((usize, usize), u32)> = map
            .free_cells()
            .filter_map(|(x, y)| {
                dist[y * map.width() + x]
                    .filter(|&d| d >= MIN_GOAL_DISTANCE)
                    .map(|d| ((x, y), d))
            })
            .collect();
        if candidates.is_empty() {
            return Err(EvalError::NoCandidateGoals(MIN_GOAL_DISTANCE));
        }
        let mut rng = stream_rng(seed, 0);
        let goals = (0..count)
            .map(|_| {
                let ((x, y), d) = candidates[rng.gen_range(0..candidates.len())];
                let pose = Pose::new(x, y, Heading::from_index(rng.gen_range(0..4)));
                NavGoal {
                    pose,
                    observation: render(map, &pose, rays),
                    shortest: d,
                }
            })
            .collect();
        Ok(Self { goals })
    }

    pub fn len(&self) -> usize {
        self.goals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.goals.is_empty()
    }
}

/// Evaluation budget: one exploration phase from the start fills the memory,
/// then every goal gets its own navigation attempt from the start pose with a
/// copy of that memory.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Protocol {
    pub explore_steps: usize,
    /// Step budget per goal.
    pub nav_steps: usize,
    pub seed: u64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            explore_steps: 200,
            nav_steps: 200,
            seed: 0,
        }
    }
}

pub enum EvalPolicy<'a> {
    Trained {
        net: &'a PolicyNet<f64>,
        frozen: &'a FrozenReachability,
    },
    /// Uniform random actions.
    Random,
}

/// Tracks one attempt against the goal: path length and success.
struct Attempt {
    goal_dist: Vec<Option<u32>>,
    width: usize,
    moved: u32,
    steps: usize,
}

impl Attempt {
    fn new(map: &MazeMap, goal: &NavGoal) -> Self {
        Self {
            goal_dist: map.distances_from(goal.pose.x, goal.pose.y),
            width: map.width(),
            moved: 0,
            steps: 0,
        }
    }

    /// Records a step from `from` to `to`; true when `to` is within the success radius.
    fn record(&mut self, from: &Pose, to: &Pose) -> bool {
        self.steps += 1;
        if from.cell() != to.cell() {
            self.moved += 1;
        }
        self.goal_dist[to.y * self.width + to.x].is_some_and(|d| d <= SUCCESS_RADIUS)
    }

    fn outcome(&self, goal_id: usize, goal: &NavGoal, success: bool) -> GoalOutcome {
        GoalOutcome {
            goal_id,
            l_i: goal.shortest,
            s_i: success as u8,
            d_i: self.moved,
            steps_used: self.steps,
        }
    }
}

/// Runs every goal of `goals` under `protocol` and collects the outcomes.
pub fn evaluate_navigation(
    map: &MazeMap,
    policy: &EvalPolicy<'_>,
    goals: &GoalSet,
    protocol: &Protocol,
) -> Result<NavResult, EvalError> {
    if goals.is_empty() {
        return Err(EvalError::EmptyGoalSet);
    }
    let start = map.start_pose();
    let mut out = Vec::with_capacity(goals.len());
    match policy {
        EvalPolicy::Random => {
            for (i, goal) in goals.goals.iter().enumerate() {
                let mut rng = stream_rng(protocol.seed, 1 + i as u64);
                let mut attempt = Attempt::new(map, goal);
                let mut pose = start;
                let mut success = false;
                while !success && attempt.steps < protocol.nav_steps {
                    let next = step(map, pose, Action::ALL[rng.gen_range(0..Action::COUNT)]);
                    success = attempt.record(&pose, &next);
                    pose = next;
                }
                out.push(attempt.outcome(i, goal, success));
            }
        }
        EvalPolicy::Trained { net, frozen } => {
            let mut frozen = (*frozen).clone();
            let mut cache = FeatureCache::new();
            let setup = EpisodeSetup {
                map,
                rays: net.rays(),
                reward: RewardConfig {
                    mode: RewardMode::NavSparse,
                    ..Default::default()
                },
                steps: protocol.explore_steps,
                nav_steps: protocol.nav_steps,
                dropout: 0.0,
                seed: protocol.seed,
            };
            let mut explored = Episode::start(setup, &mut frozen)?;
            let mut rng = stream_rng(protocol.seed, 0);
            for _ in 0..protocol.explore_steps {
                let (rec, _, _) = explored.advance(
                    net,
                    HeadKind::Explore,
                    Phase::Explore,
                    None,
                    0.0,
                    &mut frozen,
                    &mut cache,
                    &mut rng,
                )?;
                explored.records.push(rec);
            }
            explored.records.clear();
            for (i, goal) in goals.goals.iter().enumerate() {
                let mut rng = stream_rng(protocol.seed, 1 + i as u64);
                let mut ep = explored.clone();
                ep.teleport(start, &mut frozen)?;
                let key = frozen
                    .embed(&goal.observation)
                    .map_err(crate::rl::RlError::from)?
                    .key;
                let goal_features = cache.get(net, key, &goal.observation)?;
                let mut attempt = Attempt::new(map, goal);
                let mut success = false;
                while !success && attempt.steps < protocol.nav_steps {
                    let from = ep.pose;
                    ep.advance(
                        net,
                        HeadKind::Navigate,
                        Phase::Navigate,
                        Some((0, &goal_features)),
                        0.0,
                        &mut frozen,
                        &mut cache,
                        &mut rng,
                    )?;
                    success = attempt.record(&from, &ep.pose);
                }
                out.push(attempt.outcome(i, goal, success));
            }
        }
    }
    Ok(NavResult { goals: out })
}

/// Cells covered by `steps` uniformly random actions from the start pose.
pub fn random_walk_coverage(map: &MazeMap, steps: usize, seed: u64) -> usize {
    let mut rng = stream_rng(seed, 0);
    let mut pose = map.start_pose();
    let mut grid = CoverageGrid::new(map);
    grid.visit(&pose);
    for _ in 0..steps {
        pose = step(map, pose, Action::ALL[rng.gen_range(0..Action::COUNT)]);
        grid.visit(&pose);
    }
    grid.count()
}

/// Coverage of the exploration head over `steps`-step episodes (no dropout), one per seed.
pub fn evaluate_coverage(
    map: &MazeMap,
    net: &PolicyNet<f64>,
    frozen: &FrozenReachability,
    steps: usize,
    seeds: &[u64],
) -> Result<Vec<usize>, EvalError> {
    let mut frozen = frozen.clone();
    let mut cache = FeatureCache::new();
    seeds
        .iter()
        .map(|&seed| {
            let setup = EpisodeSetup {
                map,
                rays: net.rays(),
                reward: RewardConfig::default(),
                steps,
                nav_steps: 0,
                dropout: 0.0,
                seed: derive_seed(seed, 0xC0DE),
            };
            Ok(run_exploration(setup, net, &mut frozen, &mut cache)?.coverage)
        })
        .collect()
}
