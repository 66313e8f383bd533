//! PPO training of the exploration and navigation heads, and every reward
//! provider: discrete and continuous curiosity, sparse and dense navigation
//! rewards, and the two pose-supervised baselines.

mod gae;
mod ppo;
mod rewards;
mod rollout;
mod trace;
mod train;

pub use gae::gae;
pub use ppo::{ppo_update, surrogate, PpoStats, TrainStep};
pub use rewards::{
    curiosity_reward, curiosity_reward_continuous, dense_nav_reward, oracle_reward,
    sparse_nav_reward, DenseTracker, OracleState, SelfSupervisedRewards,
};
pub(crate) use rollout::Episode;
pub use rollout::{run_exploration, run_navigation, EpisodeSetup, FeatureCache};
pub use trace::{replay_buffer, replay_rewards, EpisodeTrace, GoalRecord, Phase, StepRecord};
pub use train::{run_stage2, run_stage3, BatchHook, BatchLog, StageReport, StageRun, LOG_HEADER};

use serde::{Deserialize, Serialize};

use crate::autodiff::AutodiffError;
use crate::memory::MemoryError;
use crate::policy::PolicyError;

#[derive(Debug, thiserror::Error)]
pub enum RlError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("reward mode {mode:?} cannot be used here: {reason}")]
    ModeMismatch {
        mode: RewardMode,
        reason: &'static str,
    },
    #[error("non-finite loss: {0}")]
    NonFiniteLoss(String),
    #[error("the memory buffer is empty after exploration")]
    EmptyBufferAfterExploration,
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Memory(#[from] MemoryError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    CuriosityDiscrete,
    CuriosityContinuous,
    NavSparse,
    NavSparsePlusDense,
    OracleCoverage,
    OracleDistance,
}

impl RewardMode {
    pub const ALL: [RewardMode; 6] = [
        RewardMode::CuriosityDiscrete,
        RewardMode::CuriosityContinuous,
        RewardMode::NavSparse,
        RewardMode::NavSparsePlusDense,
        RewardMode::OracleCoverage,
        RewardMode::OracleDistance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RewardMode::CuriosityDiscrete => "curiosity_discrete",
            RewardMode::CuriosityContinuous => "curiosity_continuous",
            RewardMode::NavSparse => "nav_sparse",
            RewardMode::NavSparsePlusDense => "nav_sparse_plus_dense",
            RewardMode::OracleCoverage => "oracle_coverage",
            RewardMode::OracleDistance => "oracle_distance",
        }
    }

    /// Whether rewards in this mode may read simulator poses.
    pub fn is_oracle(self) -> bool {
        matches!(
            self,
            RewardMode::OracleCoverage | RewardMode::OracleDistance
        )
    }

    /// Exploration-stage modes; the rest train the navigation head.
    pub fn is_exploration(self) -> bool {
        matches!(
            self,
            RewardMode::CuriosityDiscrete
                | RewardMode::CuriosityContinuous
                | RewardMode::OracleCoverage
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    /// Curiosity scale.
    pub alpha: f64,
    /// Sparse navigation reward, and the offset of the continuous curiosity reward.
    pub beta: f64,
    /// Novelty and success threshold, shared with the memory buffer.
    pub tau: f64,
    pub mode: RewardMode,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 10.0,
            tau: 0.5,
            mode: RewardMode::CuriosityDiscrete,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RlError> {
        if !(self.alpha > 0.0 && self.beta > 0.0) {
            return Err(RlError::InvalidConfig(format!(
                "alpha {} and beta {} must be positive",
                self.alpha, self.beta
            )));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(RlError::InvalidConfig(format!(
                "tau {} outside (0, 1)",
                self.tau
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub episodes_per_batch: usize,
    /// Exploration steps per episode (stage 2, and the exploration phase of stage 3).
    pub steps_per_episode: usize,
    /// Navigation steps per stage-3 episode.
    pub nav_steps: usize,
    pub ppo_epochs: usize,
    pub minibatch: usize,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub lr: f64,
    pub rms_alpha: f64,
    pub rms_eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: usize,
    pub dropout: f64,
    /// Standardize advantages within each minibatch.
    pub normalize_advantages: bool,
    /// Let the navigation loss update the shared CNN in stage 3.
    pub train_cnn_in_stage3: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            episodes_per_batch: 8,
            steps_per_episode: 200,
            nav_steps: 200,
            ppo_epochs: 4,
            minibatch: 400,
            gamma: 0.99,
            gae_lambda: 0.95,
            clip: 0.1,
            entropy_coef: 0.01,
            value_coef: 0.5,
            lr: 1e-3,
            rms_alpha: 0.98,
            rms_eps: 1e-5,
            weight_decay: 1e-7,
            warmup_steps: 300,
            dropout: 0.1,
            normalize_advantages: true,
            train_cnn_in_stage3: false,
        }
    }
}

impl PpoConfig {
    // Negated comparisons reject NaN as well.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), RlError> {
        let bad = |m: String| Err(RlError::InvalidConfig(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma {} outside (0, 1]", self.gamma));
        }
        if !(self.clip > 0.0) {
            return bad(format!("clip {} must be positive", self.clip));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda {} outside [0, 1]", self.gae_lambda));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} outside [0, 1)", self.dropout));
        }
        if self.episodes_per_batch == 0 || self.steps_per_episode == 0 || self.minibatch == 0 {
            return bad(
                "episodes_per_batch, steps_per_episode and minibatch must be positive".into(),
            );
        }
        Ok(())
    }
}
