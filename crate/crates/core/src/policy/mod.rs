//! Actor-critic networks that attend over the scene memory.
//!
//! One observation CNN is shared by two heads. Each head is a single
//! transformer block (attention, MLP, two layer norms) followed by a linear
//! policy head and a linear value head that both read the block output `h`.

mod batch;
mod sample;

pub use batch::{dropout_mask, MemoryBatch, Percepts, PolicyBatch};
pub use sample::{entropy, log_softmax, sample_action, ActionSample};

use std::path::Path;
use std::sync::Arc;

use rand::Rng;

use crate::autodiff::{
    self, AutodiffError, ConvEncoder, Embedding, Graph, LayerNorm, Linear, MemoryRows,
    MultiHeadAttention, ParamStore, Tensor, Var,
};
use crate::env::{Action, Observation, CHANNELS};
use crate::memory::{AgeBuckets, AgeEmbeddingTable};
use crate::reachability::{observation_batch, EMBEDDING_DIM};
use crate::scalar::Scalar;

/// Width of `c_t`, `e_t` and `h_t`.
pub const FEATURE_DIM: usize = 64;
pub const ATTENTION_HIDDEN: usize = 64;
pub const ATTENTION_HEADS: usize = 2;
pub const MLP_HIDDEN: usize = 128;
/// Initial policy-head weights are scaled by this so the untrained policy is near uniform.
const POLICY_HEAD_INIT_SCALE: f64 = 0.01;

#[derive(Debug, thiserror::Error)]
pub enum PolicyError {
    #[error("logits are not a valid distribution: {0:?}")]
    NonFiniteLogits(Vec<f64>),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum HeadKind {
    Explore,
    Navigate,
}

impl HeadKind {
    pub fn name(self) -> &'static str {
        match self {
            HeadKind::Explore => "explore",
            HeadKind::Navigate => "navigate",
        }
    }
}

/// Transformer block plus policy and value heads for one task.
#[derive(Clone, Debug)]
pub struct Head {
    pub attention: MultiHeadAttention,
    pub ln_attention: LayerNorm,
    pub mlp: [Linear; 2],
    pub ln_mlp: LayerNorm,
    pub ages: Embedding,
    pub policy: Linear,
    pub value: Linear,
}

impl Head {
    fn new<S: Scalar, R: Rng>(
        store: &mut ParamStore<S>,
        kind: HeadKind,
        age_buckets: usize,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let n = kind.name();
        let attention = MultiHeadAttention::new(
            store,
            &format!("{n}.att"),
            FEATURE_DIM,
            EMBEDDING_DIM,
            ATTENTION_HIDDEN,
            ATTENTION_HEADS,
            rng,
        )?;
        let head = Self {
            attention,
            ln_attention: LayerNorm::new(store, &format!("{n}.ln0"), FEATURE_DIM),
            mlp: [
                Linear::new(
                    store,
                    &format!("{n}.mlp0"),
                    FEATURE_DIM,
                    MLP_HIDDEN,
                    true,
                    rng,
                ),
                Linear::new(
                    store,
                    &format!("{n}.mlp1"),
                    MLP_HIDDEN,
                    FEATURE_DIM,
                    true,
                    rng,
                ),
            ],
            ln_mlp: LayerNorm::new(store, &format!("{n}.ln1"), FEATURE_DIM),
            ages: Embedding::new(store, &format!("{n}.age"), age_buckets, EMBEDDING_DIM, rng),
            policy: Linear::new(
                store,
                &format!("{n}.pi"),
                FEATURE_DIM,
                Action::COUNT,
                true,
                rng,
            ),
            value: Linear::new(store, &format!("{n}.v"), FEATURE_DIM, 1, true, rng),
        };
        let scale = S::lit(POLICY_HEAD_INIT_SCALE);
        for v in store.value_mut(head.policy.weight).values_mut() {
            *v *= scale;
        }
        *store.value_mut(head.policy.bias.expect("policy head has a bias")) =
            Tensor::zeros(vec![Action::COUNT]);
        Ok(head)
    }
}

/// Graph handles of one batched forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// `[N, 3]`
    pub logits: Var,
    /// `[N, 1]`
    pub value: Var,
    /// `[N, FEATURE_DIM]`, after dropout when a mask was given.
    pub h: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyOutput {
    pub logits: [f64; 3],
    pub value: f64,
    pub h: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct PolicyNet<S: Scalar = f64> {
    pub store: ParamStore<S>,
    pub cnn: ConvEncoder,
    pub explore: Head,
    pub navigate: Head,
    /// Projects `[CNN(x), CNN(goal)]` to the attention query width.
    pub goal_query: Linear,
    pub age_buckets: AgeBuckets,
}

impl<S: Scalar> PolicyNet<S> {
    pub fn new<R: Rng>(
        rays: usize,
        age_buckets: AgeBuckets,
        rng: &mut R,
    ) -> Result<Self, AutodiffError> {
        let mut store = ParamStore::new();
        let cnn = ConvEncoder::new(&mut store, "cnn", CHANNELS, rays, FEATURE_DIM, rng)?;
        let explore = Head::new(&mut store, HeadKind::Explore, age_buckets.count(), rng)?;
        let navigate = Head::new(&mut store, HeadKind::Navigate, age_buckets.count(), rng)?;
        let goal_query = Linear::new(
            &mut store,
            "navigate.query",
            2 * FEATURE_DIM,
            FEATURE_DIM,
            true,
            rng,
        );
        Ok(Self {
            store,
            cnn,
            explore,
            navigate,
            goal_query,
            age_buckets,
        })
    }

    pub fn rays(&self) -> usize {
        self.cnn.rays
    }

    pub fn head(&self, kind: HeadKind) -> &Head {
        match kind {
            HeadKind::Explore => &self.explore,
            HeadKind::Navigate => &self.navigate,
        }
    }

    /// Parameters of the shared CNN.
    pub fn cnn_params(&self) -> Vec<autodiff::ParamId> {
        self.prefixed("cnn.")
    }

    /// Parameters specific to one head (for navigation this includes the query projection).
    pub fn head_params(&self, kind: HeadKind) -> Vec<autodiff::ParamId> {
        self.prefixed(&format!("{}.", kind.name()))
    }

    fn prefixed(&self, prefix: &str) -> Vec<autodiff::ParamId> {
        self.store
            .ids()
            .filter(|&id| self.store.param(id).name.starts_with(prefix))
            .collect()
    }

    /// CNN features `[N, FEATURE_DIM]` on the graph (trainable).
    pub fn cnn_graph(&self, g: &mut Graph<S>, obs: &[&Observation]) -> Result<Var, AutodiffError> {
        let x = g.input(observation_batch(obs, self.rays())?);
        self.cnn.apply(g, &self.store, x)
    }

    /// CNN features as plain rows, for callers that keep the CNN frozen.
    pub fn cnn_features(&self, obs: &[&Observation]) -> Result<Vec<f64>, AutodiffError> {
        if obs.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let c = self.cnn_graph(&mut g, obs)?;
        Ok(g.value(c).values().iter().map(|v| v.as_f64()).collect())
    }

    fn percepts(&self, g: &mut Graph<S>, p: &Percepts<'_>) -> Result<Var, AutodiffError> {
        match p {
            Percepts::Raw(obs) => self.cnn_graph(g, obs),
            Percepts::Features(values) => {
                let rows = values.len() / FEATURE_DIM;
                Ok(g.input(Tensor::new(
                    vec![rows, FEATURE_DIM],
                    values.iter().map(|&v| S::lit(v)).collect(),
                )?))
            }
        }
    }

    /// Query vectors `c_t` for a batch.
    fn query(
        &self,
        g: &mut Graph<S>,
        kind: HeadKind,
        batch: &PolicyBatch<'_>,
    ) -> Result<Var, AutodiffError> {
        let c = self.percepts(g, &batch.obs)?;
        match (kind, &batch.goals) {
            (HeadKind::Explore, None) => Ok(c),
            (HeadKind::Navigate, Some(goals)) => {
                let cg = self.percepts(g, goals)?;
                let both = g.concat(c, cg)?;
                self.goal_query.apply(g, &self.store, both)
            }
            (HeadKind::Explore, Some(_)) => Err(AutodiffError::ShapeMismatch(
                "exploration takes no goal".into(),
            )),
            (HeadKind::Navigate, None) => Err(AutodiffError::ShapeMismatch(
                "navigation needs a goal".into(),
            )),
        }
    }

    /// The block and heads on top of a query and its attention context.
    fn block(
        &self,
        g: &mut Graph<S>,
        head: &Head,
        c: Var,
        ctx: Var,
        dropout: Option<&[f64]>,
    ) -> Result<ForwardVars, AutodiffError> {
        let store = &self.store;
        let e = g.add(ctx, c)?;
        let e = head.ln_attention.apply(g, store, e)?;
        let m = head.mlp[0].apply(g, store, e)?;
        let m = g.relu(m);
        let m = head.mlp[1].apply(g, store, m)?;
        let h = g.add(m, e)?;
        let mut h = head.ln_mlp.apply(g, store, h)?;
        if let Some(mask) = dropout {
            h = g.scale(h, Arc::new(mask.iter().map(|&v| S::lit(v)).collect()))?;
        }
        let logits = head.policy.apply(g, store, h)?;
        let value = head.value.apply(g, store, h)?;
        Ok(ForwardVars { logits, value, h })
    }

    fn zero_context(g: &mut Graph<S>, rows: usize) -> Var {
        g.input(Tensor::zeros(vec![rows, FEATURE_DIM]))
    }

    /// Batched forward pass over factored memory rows.
    pub fn forward_graph(
        &self,
        g: &mut Graph<S>,
        kind: HeadKind,
        batch: &PolicyBatch<'_>,
    ) -> Result<ForwardVars, AutodiffError> {
        let head = self.head(kind);
        let n = batch.len();
        let mem = batch.memory;
        if mem.queries() != n {
            return Err(AutodiffError::ShapeMismatch(format!(
                "{} memory segments for {n} queries",
                mem.queries()
            )));
        }
        if let Some(mask) = batch.dropout {
            if mask.len() != n * FEATURE_DIM {
                return Err(AutodiffError::ShapeMismatch(format!(
                    "dropout mask of {} for {n} queries",
                    mask.len()
                )));
            }
        }
        let c = self.query(g, kind, batch)?;
        if g.value(c).rows() != n {
            return Err(AutodiffError::ShapeMismatch(format!(
                "{} query rows for {n} memory segments",
                g.value(c).rows()
            )));
        }
        let ctx = if mem.rows() == 0 {
            Self::zero_context(g, n)
        } else {
            let entries = g.input(Tensor::new(
                vec![mem.entry_count(), EMBEDDING_DIM],
                mem.entries.iter().map(|&v| S::lit(v)).collect(),
            )?);
            let ages = g.param(&self.store, head.ages.table);
            let buckets: Vec<usize> = mem
                .age
                .iter()
                .map(|&a| self.age_buckets.bucket(a))
                .collect();
            let rows = MemoryRows {
                entries,
                ages: Some(ages),
                entry: &mem.entry,
                age: &buckets,
                offsets: &mem.offsets,
            };
            head.attention.attend_rows(g, &self.store, c, rows)?
        };
        self.block(g, head, c, ctx, batch.dropout)
    }

    /// Single-step forward pass, no dropout.
    pub fn forward(
        &self,
        kind: HeadKind,
        batch: &PolicyBatch<'_>,
    ) -> Result<Vec<PolicyOutput>, AutodiffError> {
        let mut g = Graph::new();
        let v = self.forward_graph(&mut g, kind, batch)?;
        Ok(collect_outputs(&g, v))
    }

    /// The learned age vectors of a head as a plain table.
    pub fn age_table(&self, kind: HeadKind) -> AgeEmbeddingTable {
        let t = self.store.value(self.head(kind).ages.table);
        let values = t.values().iter().map(|v| v.as_f64()).collect();
        AgeEmbeddingTable::new(self.age_buckets.clone(), EMBEDDING_DIM, values)
            .expect("table shape matches buckets")
    }

    /// Forward pass over an explicit aged-entry matrix `[J × EMBEDDING_DIM]` (row-major).
    fn forward_rows(
        &self,
        kind: HeadKind,
        obs: &Observation,
        goal: Option<&Observation>,
        mem: &[f64],
    ) -> Result<PolicyOutput, AutodiffError> {
        if !mem.len().is_multiple_of(EMBEDDING_DIM) {
            return Err(AutodiffError::ShapeMismatch(format!(
                "memory of {} values is not a multiple of {EMBEDDING_DIM}",
                mem.len()
            )));
        }
        let empty = MemoryBatch::with_queries(1);
        let batch = PolicyBatch {
            obs: Percepts::Raw(vec![obs]),
            goals: goal.map(|g| Percepts::Raw(vec![g])),
            memory: &empty,
            dropout: None,
        };
        let head = self.head(kind);
        let mut g = Graph::new();
        let c = self.query(&mut g, kind, &batch)?;
        let rows = mem.len() / EMBEDDING_DIM;
        let ctx = if rows == 0 {
            Self::zero_context(&mut g, 1)
        } else {
            let m = g.input(Tensor::new(
                vec![rows, EMBEDDING_DIM],
                mem.iter().map(|&v| S::lit(v)).collect(),
            )?);
            head.attention
                .attend(&mut g, &self.store, c, m, vec![0, rows])?
        };
        let v = self.block(&mut g, head, c, ctx, None)?;
        Ok(collect_outputs(&g, v).pop().expect("one row"))
    }

    /// `c = CNN(x)`, `e = LN(Att(c, M) + c)`, `h = LN(MLP(e) + e)`.
    pub fn explore_forward(
        &self,
        obs: &Observation,
        mem: &[f64],
    ) -> Result<PolicyOutput, AutodiffError> {
        self.forward_rows(HeadKind::Explore, obs, None, mem)
    }

    /// As [`explore_forward`](Self::explore_forward) with the query projected from `[CNN(x), CNN(goal)]`.
    pub fn navigate_forward(
        &self,
        obs: &Observation,
        goal: &Observation,
        mem: &[f64],
    ) -> Result<PolicyOutput, AutodiffError> {
        self.forward_rows(HeadKind::Navigate, obs, Some(goal), mem)
    }

    pub fn save(&self, path: &Path) -> Result<(), AutodiffError> {
        autodiff::save(&self.store, path)
    }

    pub fn load(path: &Path, rays: usize) -> Result<Self, AutodiffError> {
        let stored = autodiff::load(path)?;
        let buckets = stored
            .find("explore.age.table")
            .map(|id| stored.value(id).rows())
            .ok_or_else(|| {
                AutodiffError::Checkpoint("missing parameter explore.age.table".into())
            })?;
        let age_buckets = AgeBuckets::new(buckets, crate::memory::DEFAULT_MAX_AGE);
        let mut net = Self::new(rays, age_buckets, &mut rand::rngs::mock::StepRng::new(0, 0))?;
        net.store.load_from(&stored)?;
        Ok(net)
    }

    /// Copies the parameters of one head (and the shared CNN when `with_cnn`) from `other`.
    pub fn copy_head_from(&mut self, other: &PolicyNet<S>, kind: HeadKind, with_cnn: bool) {
        let mut ids = self.head_params(kind);
        if with_cnn {
            ids.extend(self.cnn_params());
        }
        for id in ids {
            *self.store.value_mut(id) = other.store.value(id).clone();
        }
    }
}

fn collect_outputs<S: Scalar>(g: &Graph<S>, v: ForwardVars) -> Vec<PolicyOutput> {
    let logits = g.value(v.logits).values();
    let values = g.value(v.value).values();
    let h = g.value(v.h);
    (0..values.len())
        .map(|i| PolicyOutput {
            logits: [
                logits[3 * i].as_f64(),
                logits[3 * i + 1].as_f64(),
                logits[3 * i + 2].as_f64(),
            ],
            value: values[i].as_f64(),
            h: h.row(i).iter().map(|x| x.as_f64()).collect(),
        })
        .collect()
}
