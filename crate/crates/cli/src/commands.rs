use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context as _};
use clap::ValueEnum;
use memnav::env::{fixtures, load_map, MazeMap};
use memnav::eval::{self, EvalPolicy, GoalSet, NavResult, Summary};
use memnav::memory::{read_dump, AgeBuckets, DumpRecord};
use memnav::policy::PolicyNet;
use memnav::reachability::{
    collect_walks, sample_pairs, train_model, FrozenReachability, ReachabilityModel,
};
use memnav::rl::{
    run_exploration, run_stage2, run_stage3, EpisodeSetup, EpisodeTrace, FeatureCache, RewardMode,
    StageRun, LOG_HEADER,
};
use memnav::seeding::{derive_seed, stream_rng};

use crate::config::{parse_mode, RunConfig};
use crate::{plot, UsageError, OUTPUT_ROOT_VAR};

pub const REACHABILITY_CKPT: &str = "reachability.ckpt";
pub const STAGE1_CURVE: &str = "stage1_curve.csv";
pub const STAGE1_REPORT: &str = "stage1_report.json";
pub const STAGE2_CKPT: &str = "policy_stage2.ckpt";
pub const STAGE2_LOG: &str = "stage2_log.csv";
pub const STAGE2_DUMP: &str = "stage2_memory.jsonl";
pub const STAGE3_CKPT: &str = "policy_stage3.ckpt";
pub const STAGE3_LOG: &str = "stage3_log.csv";

/// Seed streams of the master seed.
mod stream {
    pub const WALKS: u64 = 1;
    pub const PAIRS: u64 = 2;
    pub const STAGE1_TRAIN: u64 = 3;
    pub const POLICY_INIT: u64 = 20;
    pub const STAGE2: u64 = 21;
    pub const STAGE2_DUMP: u64 = 22;
    pub const STAGE3: u64 = 31;
    pub const GOALS: u64 = 40;
    pub const EVAL: u64 = 41;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PolicyChoice {
    Trained,
    Random,
}

impl PolicyChoice {
    fn name(self) -> &'static str {
        match self {
            PolicyChoice::Trained => "trained",
            PolicyChoice::Random => "random",
        }
    }
}

/// A required input of a stage that an earlier stage should have written.
#[derive(Debug)]
pub struct MissingCheckpoint(pub PathBuf);

impl std::fmt::Display for MissingCheckpoint {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "missing checkpoint {}; run the previous stage first",
            self.0.display()
        )
    }
}

impl std::error::Error for MissingCheckpoint {}

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub map: MazeMap,
}

impl Context {
    pub fn new(cfg: RunConfig) -> anyhow::Result<Self> {
        let text = match fixtures::by_name(&cfg.map) {
            Some(t) => t.to_string(),
            None => fs::read_to_string(&cfg.map)
                .map_err(|e| anyhow!("map not found: {} ({e})", cfg.map))?,
        };
        let map =
            load_map(&text, cfg.map_seed).with_context(|| format!("loading map {}", cfg.map))?;
        let root =
            std::env::var_os(OUTPUT_ROOT_VAR).map_or_else(|| PathBuf::from("."), PathBuf::from);
        let out = root.join(&cfg.output);
        Ok(Self { cfg, out, map })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> anyhow::Result<BufWriter<File>> {
        fs::create_dir_all(&self.out)
            .with_context(|| format!("creating {}", self.out.display()))?;
        let p = self.path(name);
        Ok(BufWriter::new(
            File::create(&p).with_context(|| format!("creating {}", p.display()))?,
        ))
    }

    fn require(&self, name: &str) -> anyhow::Result<PathBuf> {
        let p = self.path(name);
        if !p.is_file() {
            bail!(MissingCheckpoint(p));
        }
        Ok(p)
    }

    fn seed(&self, stream: u64) -> u64 {
        derive_seed(self.cfg.seed, stream)
    }

    fn frozen(&self) -> anyhow::Result<FrozenReachability> {
        let p = self.require(REACHABILITY_CKPT)?;
        let model = ReachabilityModel::<f64>::load(&p, self.cfg.rays)
            .with_context(|| format!("loading {}", p.display()))?;
        Ok(FrozenReachability::new(model))
    }

    fn policy(&self, name: &str) -> anyhow::Result<PolicyNet<f64>> {
        let p = self.require(name)?;
        PolicyNet::load(&p, self.cfg.rays).with_context(|| format!("loading {}", p.display()))
    }
}

pub fn stage1(ctx: &Context) -> anyhow::Result<()> {
    let s1 = &ctx.cfg.stage1;
    let walks = collect_walks(&ctx.map, &s1.pairing, ctx.cfg.rays, ctx.seed(stream::WALKS));
    let pairs = sample_pairs(&walks, &s1.pairing, ctx.seed(stream::PAIRS))?;
    let train = memnav::reachability::TrainConfig {
        seed: ctx.seed(stream::STAGE1_TRAIN),
        ..s1.train.clone()
    };
    let (model, report) = train_model(&pairs, ctx.cfg.rays, &train)?;
    fs::create_dir_all(&ctx.out)?;
    model.save(&ctx.path(REACHABILITY_CKPT))?;
    let mut curve = csv::Writer::from_writer(ctx.create(STAGE1_CURVE)?);
    for e in &report.epochs {
        curve.serialize(e)?;
    }
    curve.flush()?;
    let mut w = ctx.create(STAGE1_REPORT)?;
    serde_json::to_writer_pretty(&mut w, &report)?;
    writeln!(w)?;
    w.flush()?;
    println!(
        "holdout accuracy {:.4} ({} train / {} holdout pairs)",
        report.final_holdout_accuracy(),
        report.train_pairs,
        report.holdout_pairs
    );
    Ok(())
}

/// Writes the log header, then one row per batch, checkpointing every `every` batches.
struct Logger<'a> {
    ctx: &'a Context,
    log: BufWriter<File>,
    ckpt: &'static str,
    every: usize,
}

impl<'a> Logger<'a> {
    fn new(ctx: &'a Context, log: &str, ckpt: &'static str, every: usize) -> anyhow::Result<Self> {
        let mut log = ctx.create(log)?;
        writeln!(log, "{LOG_HEADER}")?;
        Ok(Self {
            ctx,
            log,
            ckpt,
            every,
        })
    }

    fn batch(
        &mut self,
        row: &memnav::rl::BatchLog,
        net: &PolicyNet<f64>,
    ) -> Result<(), memnav::rl::RlError> {
        writeln!(self.log, "{}", row.csv_row())?;
        self.log.flush()?;
        if self.every > 0 && (row.batch + 1).is_multiple_of(self.every) {
            net.save(&self.ctx.path(self.ckpt))
                .map_err(memnav::rl::RlError::from)?;
        }
        Ok(())
    }
}

fn mode_or(flag: Option<&str>, default: RewardMode) -> anyhow::Result<RewardMode> {
    flag.map_or(Ok(default), parse_mode)
}

pub fn stage2(ctx: &Context, reward: Option<&str>, batches: Option<usize>) -> anyhow::Result<()> {
    let s2 = &ctx.cfg.stage2;
    let mode = mode_or(reward, s2.mode)?;
    if !mode.is_exploration() {
        bail!(UsageError(format!(
            "{} is not an exploration reward",
            mode.name()
        )));
    }
    let frozen = ctx.frozen()?;
    let mut rng = stream_rng(ctx.seed(stream::POLICY_INIT), 0);
    let mut net = PolicyNet::<f64>::new(
        ctx.cfg.rays,
        AgeBuckets::new(s2.age_buckets, s2.max_age),
        &mut rng,
    )?;
    let run = StageRun {
        map: &ctx.map,
        rays: ctx.cfg.rays,
        reward: ctx.cfg.reward.with_mode(mode),
        ppo: &s2.ppo,
        batches: batches.unwrap_or(s2.batches),
        first_batch: 0,
        workers: ctx.cfg.workers,
        seed: ctx.seed(stream::STAGE2),
    };
    let mut logger = Logger::new(ctx, STAGE2_LOG, STAGE2_CKPT, s2.checkpoint_every)?;
    let report = run_stage2(&mut net, &frozen, &run, &mut |row, net| {
        logger.batch(row, net)
    })?;
    net.save(&ctx.path(STAGE2_CKPT))?;

    let mut frozen = frozen;
    let setup = EpisodeSetup {
        map: &ctx.map,
        rays: ctx.cfg.rays,
        reward: run.reward,
        steps: s2.ppo.steps_per_episode,
        nav_steps: 0,
        dropout: 0.0,
        seed: ctx.seed(stream::STAGE2_DUMP),
    };
    let trace = run_exploration(setup, &net, &mut frozen, &mut FeatureCache::new())?;
    write_trace_dump(&trace, ctx.create(STAGE2_DUMP)?)?;
    let last = report.batches.last();
    println!(
        "stage 2 ({}): {} batches, {} env steps, final coverage {:.2}, evaluation episode coverage {}",
        mode.name(),
        report.batches.len(),
        report.env_steps,
        last.map_or(0.0, |b| b.coverage_cells),
        trace.coverage
    );
    Ok(())
}

/// Buffer and graph of one episode as JSON lines, entries carrying their display poses.
fn write_trace_dump<W: Write>(trace: &EpisodeTrace, mut w: W) -> anyhow::Result<()> {
    let entries = trace
        .entries
        .iter()
        .enumerate()
        .map(|(index, e)| DumpRecord::Entry {
            index,
            insert_step: e.insert_step,
            embedding: e.embedding.vector.to_vec(),
            pose: trace.entry_poses.get(index).copied(),
        });
    let edges = trace
        .edges
        .iter()
        .map(|&(from, to)| DumpRecord::Edge { from, to });
    for rec in entries.chain(edges) {
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn stage3(ctx: &Context, reward: Option<&str>, batches: Option<usize>) -> anyhow::Result<()> {
    let s3 = &ctx.cfg.stage3;
    let mode = mode_or(reward, s3.mode)?;
    if mode.is_exploration() {
        bail!(UsageError(format!(
            "{} is not a navigation reward",
            mode.name()
        )));
    }
    let frozen = ctx.frozen()?;
    let mut net = ctx.policy(STAGE2_CKPT)?;
    let run = StageRun {
        map: &ctx.map,
        rays: ctx.cfg.rays,
        reward: ctx.cfg.reward.with_mode(mode),
        ppo: &s3.ppo,
        batches: batches.unwrap_or(s3.batches),
        first_batch: 0,
        workers: ctx.cfg.workers,
        seed: ctx.seed(stream::STAGE3),
    };
    let mut logger = Logger::new(ctx, STAGE3_LOG, STAGE3_CKPT, s3.checkpoint_every)?;
    let report = run_stage3(&mut net, &frozen, &run, &mut |row, net| {
        logger.batch(row, net)
    })?;
    net.save(&ctx.path(STAGE3_CKPT))?;
    println!(
        "stage 3 ({}): {} batches, {} env steps, final mean return {:.3}",
        mode.name(),
        report.batches.len(),
        report.env_steps,
        report.batches.last().map_or(0.0, |b| b.mean_return)
    );
    Ok(())
}

pub fn eval_results_name(policy: PolicyChoice) -> String {
    format!("eval_{}_results.csv", policy.name())
}

pub fn eval_summary_name(policy: PolicyChoice) -> String {
    format!("eval_{}_summary.json", policy.name())
}

pub fn eval(ctx: &Context, policy: PolicyChoice) -> anyhow::Result<()> {
    let e = &ctx.cfg.eval;
    let goals = GoalSet::sample(&ctx.map, ctx.cfg.rays, e.goals, ctx.seed(stream::GOALS))?;
    let protocol = eval::Protocol {
        seed: ctx.seed(stream::EVAL),
        ..e.protocol
    };
    let result: NavResult = match policy {
        PolicyChoice::Random => {
            eval::evaluate_navigation(&ctx.map, &EvalPolicy::Random, &goals, &protocol)?
        }
        PolicyChoice::Trained => {
            let frozen = ctx.frozen()?;
            let net = ctx.policy(STAGE3_CKPT)?;
            eval::evaluate_navigation(
                &ctx.map,
                &EvalPolicy::Trained {
                    net: &net,
                    frozen: &frozen,
                },
                &goals,
                &protocol,
            )?
        }
    };
    eval::write_results_csv(&result, ctx.create(&eval_results_name(policy))?)?;
    let summary = Summary::new(&result, &e.bins)?;
    eval::write_summary_json(&summary, ctx.create(&eval_summary_name(policy))?)?;
    println!(
        "{} policy: success rate {:.4}, SPL {:.4} over {} goals",
        policy.name(),
        summary.success_rate,
        summary.spl,
        summary.goals
    );
    Ok(())
}

pub fn plot(ctx: &Context, logs: &[PathBuf]) -> anyhow::Result<()> {
    let defaults = [ctx.path(STAGE2_LOG), ctx.path(STAGE3_LOG)];
    let logs: Vec<&Path> = if logs.is_empty() {
        defaults
            .iter()
            .filter(|p| p.is_file())
            .map(PathBuf::as_path)
            .collect()
    } else {
        logs.iter().map(PathBuf::as_path).collect()
    };
    let mut written = Vec::new();
    let mut series = Vec::new();
    for p in &logs {
        series.push((
            p.file_stem()
                .map_or_else(|| "log".into(), |s| s.to_string_lossy().into_owned()),
            plot::read_log(p)?,
        ));
    }
    if !series.is_empty() {
        let coverage: Vec<_> = series
            .iter()
            .map(|(n, rows)| {
                (
                    n.clone(),
                    rows.iter()
                        .map(|r| (r.batch as f64, r.coverage_cells))
                        .collect(),
                )
            })
            .collect();
        let reward: Vec<_> = series
            .iter()
            .map(|(n, rows)| {
                (
                    n.clone(),
                    rows.iter()
                        .map(|r| (r.batch as f64, r.mean_return))
                        .collect(),
                )
            })
            .collect();
        written.push(write_svg(
            ctx,
            "coverage.svg",
            &plot::line_chart("Coverage", "batch", "cells visited", &coverage),
        )?);
        written.push(write_svg(
            ctx,
            "reward.svg",
            &plot::line_chart("Mean return", "batch", "return", &reward),
        )?);
    }
    let summary_path = ctx.path(&eval_summary_name(PolicyChoice::Trained));
    if summary_path.is_file() {
        let summary: Summary = serde_json::from_reader(BufReader::new(File::open(&summary_path)?))
            .map_err(|e| plot::MalformedLog(format!("{}: {e}", summary_path.display())))?;
        let bars: Vec<(String, f64)> = summary
            .bins
            .iter()
            .map(|b| (format!("({}, {}]", b.lo, b.hi), b.spl))
            .collect();
        written.push(write_svg(
            ctx,
            "spl_by_distance.svg",
            &plot::bar_chart("SPL by shortest distance", "SPL", &bars),
        )?);
    }
    let dump_path = ctx.path(STAGE2_DUMP);
    if dump_path.is_file() {
        let records = read_dump(BufReader::new(File::open(&dump_path)?))
            .map_err(|e| plot::MalformedLog(format!("{}: {e}", dump_path.display())))?;
        written.push(write_svg(
            ctx,
            "graph.svg",
            &plot::graph_svg(&ctx.map, &records)?,
        )?);
    }
    if written.is_empty() {
        bail!(UsageError(format!(
            "nothing to plot in {}",
            ctx.out.display()
        )));
    }
    for p in written {
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn write_svg(ctx: &Context, name: &str, svg: &str) -> anyhow::Result<PathBuf> {
    let mut w = ctx.create(name)?;
    w.write_all(svg.as_bytes())?;
    w.flush()?;
    Ok(ctx.path(name))
}

pub fn replay(ctx: &Context) -> anyhow::Result<()> {
    let dump = ctx.require(STAGE2_DUMP)?;
    let frozen = ctx.frozen()?;
    let model = frozen.model();
    let records = read_dump(BufReader::new(File::open(&dump)?))?;
    let mut entries: Vec<(usize, Vec<f64>)> = Vec::new();
    let mut edges = Vec::new();
    for r in records {
        match r {
            DumpRecord::Entry {
                index,
                insert_step,
                embedding,
                ..
            } => {
                if index != entries.len() {
                    bail!(plot::MalformedLog(format!("entry {index} out of order")));
                }
                entries.push((insert_step, embedding));
            }
            DumpRecord::Edge { from, to } => edges.push((from, to)),
        }
    }
    let tau = ctx.cfg.reward.tau;
    let mut violations = 0;
    for j in 1..entries.len() {
        let current: Vec<&[f64]> = vec![&entries[j].1[..]; j];
        let earlier: Vec<&[f64]> = entries[..j].iter().map(|e| &e.1[..]).collect();
        let scores = model.compare_batch(&current, &earlier)?;
        violations += scores.iter().filter(|&&s| s >= tau).count();
    }
    let ordered = entries.windows(2).all(|w| w[0].0 < w[1].0);
    let dangling = edges
        .iter()
        .filter(|(a, b)| *a >= entries.len() || *b >= entries.len())
        .count();
    println!(
        "entries {}, edges {}, separation violations {violations}, dangling edges {dangling}",
        entries.len(),
        edges.len()
    );
    if violations > 0 || dangling > 0 || !ordered {
        bail!("memory dump {} fails replay checks", dump.display());
    }
    Ok(())
}
