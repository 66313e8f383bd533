use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use memnav::eval::Protocol;
use memnav::memory::{DEFAULT_AGE_BUCKETS, DEFAULT_MAX_AGE};
use memnav::reachability::{PairingConfig, TrainConfig};
use memnav::rl::{PpoConfig, RewardConfig, RewardMode};
use serde::{Deserialize, Serialize};

use crate::UsageError;

/// Every setting of a pipeline run. Unknown keys are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Fixture name (`rooms15`, `wings19`, `halls31`) or a path to a map file.
    pub map: String,
    pub map_seed: u64,
    /// Master seed; every stage derives its own streams from it.
    pub seed: u64,
    pub rays: usize,
    /// Output directory, relative to the output root.
    pub output: PathBuf,
    pub workers: usize,
    pub reward: RewardParams,
    pub stage1: Stage1Config,
    pub stage2: Stage2Config,
    pub stage3: Stage3Config,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            map: "rooms15".into(),
            map_seed: 0,
            seed: 0,
            rays: memnav::env::DEFAULT_RAYS,
            output: PathBuf::from("run"),
            workers: 1,
            reward: RewardParams::default(),
            stage1: Stage1Config::default(),
            stage2: Stage2Config::default(),
            stage3: Stage3Config::default(),
            eval: EvalConfig::default(),
        }
    }
}

/// Reward scales shared by stages 2 and 3.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardParams {
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
}

impl Default for RewardParams {
    fn default() -> Self {
        let r = RewardConfig::default();
        Self {
            alpha: r.alpha,
            beta: r.beta,
            tau: r.tau,
        }
    }
}

impl RewardParams {
    pub fn with_mode(self, mode: RewardMode) -> RewardConfig {
        RewardConfig {
            alpha: self.alpha,
            beta: self.beta,
            tau: self.tau,
            mode,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage1Config {
    pub pairing: PairingConfig,
    /// `train.seed` is replaced by a stream of the master seed.
    pub train: TrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage2Config {
    pub mode: RewardMode,
    pub batches: usize,
    pub checkpoint_every: usize,
    pub age_buckets: usize,
    pub max_age: usize,
    pub ppo: PpoConfig,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            mode: RewardMode::CuriosityDiscrete,
            batches: 60,
            checkpoint_every: 10,
            age_buckets: DEFAULT_AGE_BUCKETS,
            max_age: DEFAULT_MAX_AGE,
            ppo: PpoConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Stage3Config {
    pub mode: RewardMode,
    pub batches: usize,
    pub checkpoint_every: usize,
    pub ppo: PpoConfig,
}

impl Default for Stage3Config {
    fn default() -> Self {
        Self {
            mode: RewardMode::NavSparsePlusDense,
            batches: 60,
            checkpoint_every: 10,
            ppo: PpoConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub goals: usize,
    pub protocol: Protocol,
    /// Distance bin edges in cells, `(e0, e1], (e1, e2], …`.
    pub bins: Vec<u32>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            goals: memnav::eval::DEFAULT_GOALS,
            protocol: Protocol::default(),
            bins: vec![0, 5, 10, 15, 20, 30, 50],
        }
    }
}

impl RunConfig {
    /// Reads `path` (if any), applies dotted `key=value` overrides, and parses strictly.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> anyhow::Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                text.parse::<toml::Table>()
                    .map_err(|e| UsageError(format!("config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| UsageError(format!("config: {e}")))?;
        Ok(cfg)
    }
}

/// Sets `a.b.c = value` in `table`; the value is parsed as TOML, falling back to a string.
pub fn apply_override(table: &mut toml::Table, item: &str) -> Result<(), UsageError> {
    let (key, raw) = item
        .split_once('=')
        .ok_or_else(|| UsageError(format!("override `{item}` is not key=value")))?;
    let value = parse_value(raw.trim());
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(UsageError(format!("bad override key `{key}`")));
    }
    let (last, path) = parts.split_last().expect("split yields one part");
    let mut cur = table;
    for p in path {
        let next = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match next {
            toml::Value::Table(t) => t,
            _ => {
                return Err(UsageError(format!(
                    "override `{key}`: `{p}` is not a table"
                )))
            }
        };
    }
    cur.insert(last.to_string(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Reward mode from its config name or a short alias.
pub fn parse_mode(s: &str) -> anyhow::Result<RewardMode> {
    let mode = match s {
        "discrete" => RewardMode::CuriosityDiscrete,
        "continuous" => RewardMode::CuriosityContinuous,
        "sparse" => RewardMode::NavSparse,
        "dense" | "sparse+dense" => RewardMode::NavSparsePlusDense,
        "oracle" | "oracle-coverage" => RewardMode::OracleCoverage,
        "oracle-distance" => RewardMode::OracleDistance,
        other => match RewardMode::ALL.iter().find(|m| m.name() == other) {
            Some(m) => *m,
            None => bail!(UsageError(format!("unknown reward `{other}`"))),
        },
    };
    Ok(mode)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        let back: RunConfig = toml::from_str(&text).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(RunConfig::load(None, &[]).unwrap(), cfg);
    }

    #[test]
    fn dotted_overrides() {
        let cfg = RunConfig::load(
            None,
            &[
                "stage2.ppo.lr=0.5".into(),
                "map=wings19".into(),
                "stage3.mode=\"nav_sparse\"".into(),
                "eval.bins=[0, 3]".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.stage2.ppo.lr, 0.5);
        assert_eq!(cfg.map, "wings19");
        assert_eq!(cfg.stage3.mode, RewardMode::NavSparse);
        assert_eq!(cfg.eval.bins, vec![0, 3]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(RunConfig::load(None, &["stage2.ppo.learning_rate=0.5".into()]).is_err());
        assert!(RunConfig::load(None, &["nonsense=1".into()]).is_err());
        assert!(RunConfig::load(None, &["novalue".into()]).is_err());
        assert!(RunConfig::load(None, &["seed.x=1".into()]).is_err());
    }

    #[test]
    fn mode_aliases() {
        assert_eq!(
            parse_mode("continuous").unwrap(),
            RewardMode::CuriosityContinuous
        );
        assert_eq!(
            parse_mode("nav_sparse_plus_dense").unwrap(),
            RewardMode::NavSparsePlusDense
        );
        assert!(parse_mode("bogus").is_err());
    }
}
