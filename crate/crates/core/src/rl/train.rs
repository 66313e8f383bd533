use super::gae::gae;
use super::ppo::{ppo_update, PpoStats, TrainStep};
use super::rollout::{run_exploration, run_navigation, EpisodeSetup, FeatureCache};
use super::trace::{EpisodeTrace, Phase};
use super::{PpoConfig, RewardConfig, RlError};
use crate::autodiff::{OptimizerConfig, OptimizerState, ParamId};
use crate::env::MazeMap;
use crate::policy::{HeadKind, PolicyNet};
use crate::reachability::FrozenReachability;
use crate::seeding::{derive_seed, stream_rng};

/// Column names of the per-batch training log.
pub const LOG_HEADER: &str = "batch,mode,mean_return,coverage_cells,buffer_size,graph_edges,policy_loss,value_loss,entropy,clip_fraction";

/// Stream of the PPO minibatch shuffle within a batch seed.
const SHUFFLE_STREAM: u64 = u64::MAX;

/// Summary of one PPO batch; rollout columns are means over its episodes.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLog {
    pub batch: usize,
    pub mode: super::RewardMode,
    pub mean_return: f64,
    pub coverage_cells: f64,
    pub buffer_size: f64,
    pub graph_edges: f64,
    pub stats: PpoStats,
}

impl BatchLog {
    /// One line matching [`LOG_HEADER`], without a trailing newline.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.batch,
            self.mode.name(),
            self.mean_return,
            self.coverage_cells,
            self.buffer_size,
            self.graph_edges,
            self.stats.policy_loss,
            self.stats.value_loss,
            self.stats.entropy,
            self.stats.clip_fraction
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StageReport {
    pub batches: Vec<BatchLog>,
    /// Environment steps over all rollouts.
    pub env_steps: usize,
}

/// Settings shared by both RL stages.
#[derive(Clone, Copy, Debug)]
pub struct StageRun<'a> {
    pub map: &'a MazeMap,
    pub rays: usize,
    pub reward: RewardConfig,
    pub ppo: &'a PpoConfig,
    pub batches: usize,
    /// Index of the first batch; batch seeds derive from it, so a resumed run
    /// continues the same sequence.
    pub first_batch: usize,
    /// Rollout threads (at least 1).
    pub workers: usize,
    pub seed: u64,
}

/// Called after every batch with its log line and the updated network.
pub type BatchHook<'h> = dyn FnMut(&BatchLog, &PolicyNet<f64>) -> Result<(), RlError> + 'h;

struct Worker {
    frozen: FrozenReachability,
    cache: FeatureCache,
}

type Runner = fn(
    EpisodeSetup<'_>,
    &PolicyNet<f64>,
    &mut FrozenReachability,
    &mut FeatureCache,
) -> Result<EpisodeTrace, RlError>;

/// Stage 2: trains the CNN and the exploration head with an exploration reward.
pub fn run_stage2(
    net: &mut PolicyNet<f64>,
    frozen: &FrozenReachability,
    run: &StageRun<'_>,
    hook: &mut BatchHook<'_>,
) -> Result<StageReport, RlError> {
    if !run.reward.mode.is_exploration() {
        return Err(RlError::ModeMismatch {
            mode: run.reward.mode,
            reason: "stage 2 trains exploration",
        });
    }
    let mut params = net.cnn_params();
    params.extend(net.head_params(HeadKind::Explore));
    run_stage(
        net,
        frozen,
        run,
        HeadKind::Explore,
        &params,
        true,
        run_exploration,
        hook,
    )
}

/// Stage 3: trains the navigation head (and the CNN if configured) on top of a
/// frozen exploration head.
pub fn run_stage3(
    net: &mut PolicyNet<f64>,
    frozen: &FrozenReachability,
    run: &StageRun<'_>,
    hook: &mut BatchHook<'_>,
) -> Result<StageReport, RlError> {
    if run.reward.mode.is_exploration() {
        return Err(RlError::ModeMismatch {
            mode: run.reward.mode,
            reason: "stage 3 trains navigation",
        });
    }
    let train_cnn = run.ppo.train_cnn_in_stage3;
    let mut params = net.head_params(HeadKind::Navigate);
    if train_cnn {
        params.extend(net.cnn_params());
    }
    run_stage(
        net,
        frozen,
        run,
        HeadKind::Navigate,
        &params,
        train_cnn,
        run_navigation,
        hook,
    )
}

#[allow(clippy::too_many_arguments)]
fn run_stage(
    net: &mut PolicyNet<f64>,
    frozen: &FrozenReachability,
    run: &StageRun<'_>,
    kind: HeadKind,
    params: &[ParamId],
    train_cnn: bool,
    runner: Runner,
    hook: &mut BatchHook<'_>,
) -> Result<StageReport, RlError> {
    let cfg = run.ppo;
    cfg.validate()?;
    run.reward.validate()?;
    if run.workers == 0 {
        return Err(RlError::InvalidConfig(
            "at least one rollout worker is needed".into(),
        ));
    }
    let mut opt = OptimizerState::new(OptimizerConfig {
        warmup_steps: cfg.warmup_steps,
        ..OptimizerConfig::rmsprop(cfg.lr, cfg.rms_alpha, cfg.rms_eps, cfg.weight_decay)
    });
    let mut workers: Vec<Worker> = (0..run.workers)
        .map(|_| Worker {
            frozen: frozen.clone(),
            cache: FeatureCache::new(),
        })
        .collect();
    let phase = if kind == HeadKind::Explore {
        Phase::Explore
    } else {
        Phase::Navigate
    };
    let mut report = StageReport::default();
    for batch in run.first_batch..run.first_batch + run.batches {
        let batch_seed = derive_seed(run.seed, batch as u64);
        if train_cnn {
            workers.iter_mut().for_each(|w| w.cache.clear());
        }
        let traces = rollouts(net, run, batch_seed, &mut workers, runner)?;
        report.env_steps += traces.iter().map(|t| t.records.len()).sum::<usize>();

        let mut steps = Vec::new();
        for (i, trace) in traces.iter().enumerate() {
            let recs: Vec<_> = trace.phase(phase).collect();
            let rewards: Vec<f64> = recs.iter().map(|r| r.reward).collect();
            let values: Vec<f64> = recs.iter().map(|r| r.value).collect();
            let (adv, ret) = gae(&rewards, &values, cfg.gamma, cfg.gae_lambda);
            steps.extend(recs.into_iter().zip(adv.into_iter().zip(ret)).map(
                |(record, (advantage, ret))| TrainStep {
                    trace: i,
                    record,
                    advantage,
                    ret,
                },
            ));
        }
        let mut rng = stream_rng(batch_seed, SHUFFLE_STREAM);
        let stats = ppo_update(
            net, kind, &traces, &steps, cfg, &mut opt, params, train_cnn, &mut rng,
        )?;

        if traces.is_empty() {
            return Err(RlError::EmptyBufferAfterExploration);
        }
        let n = traces.len() as f64;
        let mean = |f: &dyn Fn(&EpisodeTrace) -> f64| traces.iter().map(f).sum::<f64>() / n;
        let log = BatchLog {
            batch,
            mode: run.reward.mode,
            mean_return: mean(&|t| t.phase(phase).map(|r| r.reward).sum()),
            coverage_cells: mean(&|t| t.coverage as f64),
            buffer_size: mean(&|t| t.entries.len() as f64),
            graph_edges: mean(&|t| t.edges.len() as f64),
            stats,
        };
        log::info!("{}", log.csv_row());
        hook(&log, net)?;
        report.batches.push(log);
    }
    Ok(report)
}

/// Collects one batch of episodes; episode `e` runs on worker `e % workers`
/// and traces come back in episode order.
fn rollouts(
    net: &PolicyNet<f64>,
    run: &StageRun<'_>,
    batch_seed: u64,
    workers: &mut [Worker],
    runner: Runner,
) -> Result<Vec<EpisodeTrace>, RlError> {
    let cfg = run.ppo;
    let setup = |episode: usize| EpisodeSetup {
        map: run.map,
        rays: run.rays,
        reward: run.reward,
        steps: cfg.steps_per_episode,
        nav_steps: cfg.nav_steps,
        dropout: cfg.dropout,
        seed: derive_seed(batch_seed, episode as u64),
    };
    let count = workers.len();
    if count == 1 {
        let w = &mut workers[0];
        let mut traces = Vec::with_capacity(cfg.episodes_per_batch);
        for e in 0..cfg.episodes_per_batch {
            traces.extend(skip_empty(runner(
                setup(e),
                net,
                &mut w.frozen,
                &mut w.cache,
            ))?);
        }
        return Ok(traces);
    }
    let per_worker: Vec<Result<Vec<(usize, EpisodeTrace)>, RlError>> = std::thread::scope(|s| {
        let handles: Vec<_> = workers
            .iter_mut()
            .enumerate()
            .map(|(wi, w)| {
                let setup = &setup;
                s.spawn(move || {
                    (wi..cfg.episodes_per_batch)
                        .step_by(count)
                        .filter_map(|e| {
                            skip_empty(runner(setup(e), net, &mut w.frozen, &mut w.cache))
                                .map(|t| t.map(|t| (e, t)))
                                .transpose()
                        })
                        .collect()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("rollout worker panicked"))
            .collect()
    });
    let mut traces: Vec<(usize, EpisodeTrace)> = Vec::with_capacity(cfg.episodes_per_batch);
    for r in per_worker {
        traces.extend(r?);
    }
    traces.sort_by_key(|(e, _)| *e);
    Ok(traces.into_iter().map(|(_, t)| t).collect())
}

/// Drops episodes whose exploration phase stored nothing.
fn skip_empty(r: Result<EpisodeTrace, RlError>) -> Result<Option<EpisodeTrace>, RlError> {
    match r {
        Ok(t) => Ok(Some(t)),
        Err(RlError::EmptyBufferAfterExploration) => {
            log::warn!("episode skipped: empty memory after exploration");
            Ok(None)
        }
        Err(e) => Err(e),
    }
}
