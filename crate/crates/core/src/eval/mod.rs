//! Coverage, success rate and SPL, plus the image-goal evaluation protocol.

mod io;
mod protocol;

pub use io::{write_results_csv, write_summary_json, Summary};
pub use protocol::{
    evaluate_coverage, evaluate_navigation, random_walk_coverage, EvalPolicy, GoalSet, NavGoal,
    Protocol, DEFAULT_GOALS, MIN_GOAL_DISTANCE, SUCCESS_RADIUS,
};

use serde::{Deserialize, Serialize};

use crate::env::{MazeMap, Pose};
use crate::rl::RlError;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("no goals to evaluate")]
    EmptyGoalSet,
    #[error("no free cell is at least {0} cells from the start")]
    NoCandidateGoals(u32),
    #[error(transparent)]
    Rl(#[from] RlError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Visited flags over the map's cells.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CoverageGrid {
    width: usize,
    visited: Vec<bool>,
    count: usize,
}

impl CoverageGrid {
    pub fn new(map: &MazeMap) -> Self {
        Self {
            width: map.width(),
            visited: vec![false; map.width() * map.height()],
            count: 0,
        }
    }

    /// Marks the pose's cell; true on the first visit.
    pub fn visit(&mut self, pose: &Pose) -> bool {
        let i = pose.y * self.width + pose.x;
        let new = !self.visited[i];
        if new {
            self.visited[i] = true;
            self.count += 1;
        }
        new
    }

    pub fn is_visited(&self, x: usize, y: usize) -> bool {
        self.visited[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.count
    }
}

/// Number of distinct cells among `poses`.
pub fn coverage<'a>(poses: impl IntoIterator<Item = &'a Pose>, map: &MazeMap) -> usize {
    let mut grid = CoverageGrid::new(map);
    poses.into_iter().for_each(|p| {
        grid.visit(p);
    });
    grid.count()
}

/// Outcome of one navigation goal.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoalOutcome {
    pub goal_id: usize,
    /// Shortest path length from the start, in cells.
    pub l_i: u32,
    pub s_i: u8,
    /// Cells moved.
    pub d_i: u32,
    pub steps_used: usize,
}

impl GoalOutcome {
    pub fn success(&self) -> bool {
        self.s_i == 1
    }

    /// `s_i · l_i / max(l_i, d_i)`.
    pub fn spl_term(&self) -> f64 {
        if self.success() {
            f64::from(self.l_i) / f64::from(self.l_i.max(self.d_i))
        } else {
            0.0
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NavResult {
    pub goals: Vec<GoalOutcome>,
}

impl NavResult {
    pub fn success_rate(&self) -> Result<f64, EvalError> {
        if self.goals.is_empty() {
            return Err(EvalError::EmptyGoalSet);
        }
        Ok(self.goals.iter().filter(|g| g.success()).count() as f64 / self.goals.len() as f64)
    }

    pub fn spl(&self) -> Result<f64, EvalError> {
        spl(&self.goals)
    }
}

/// Success weighted by path length over `results`.
pub fn spl(results: &[GoalOutcome]) -> Result<f64, EvalError> {
    if results.is_empty() {
        return Err(EvalError::EmptyGoalSet);
    }
    Ok(results.iter().map(GoalOutcome::spl_term).sum::<f64>() / results.len() as f64)
}

/// Aggregates of the goals whose `l_i` falls in `(lo, hi]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin {
    pub lo: u32,
    pub hi: u32,
    pub count: usize,
    pub success_rate: f64,
    pub spl: f64,
}

/// Per-bin success rate and SPL for consecutive edges `(e0, e1], (e1, e2], …`.
/// Bins without goals are left out.
pub fn breakdown_by_distance(results: &[GoalOutcome], edges: &[u32]) -> Vec<DistanceBin> {
    edges
        .windows(2)
        .filter_map(|w| {
            let (lo, hi) = (w[0], w[1]);
            let inside: Vec<GoalOutcome> = results
                .iter()
                .copied()
                .filter(|g| g.l_i > lo && g.l_i <= hi)
                .collect();
            let spl = spl(&inside).ok()?;
            let success_rate =
                inside.iter().filter(|g| g.success()).count() as f64 / inside.len() as f64;
            Some(DistanceBin {
                lo,
                hi,
                count: inside.len(),
                success_rate,
                spl,
            })
        })
        .collect()
}

/// Goals per shortest-path length.
pub fn distance_histogram(results: &[GoalOutcome]) -> std::collections::BTreeMap<u32, usize> {
    let mut h = std::collections::BTreeMap::new();
    for g in results {
        *h.entry(g.l_i).or_default() += 1;
    }
    h
}
